"""Small built-in word lists for the shallow caption parser."""

PERSON_NOUNS = frozenset("""
man men woman women person people boy boys girl girls child children kid kids
player players lady ladies guy guys gentleman gentlemen adult adults teenager
teenagers teen teens baby babies toddler toddlers worker workers rider riders
skier skiers surfer surfers skateboarder skateboarders snowboarder snowboarders
biker bikers cyclist cyclists chef chefs cook cooks officer officers policeman
policemen policewoman soldier soldiers athlete athletes student students
tourist tourists mother father mom dad son daughter brother sister husband wife
grandmother grandfather individual individuals crowd couple family pitcher
batter catcher runner runners dancer dancers musician musicians farmer farmers
vendor vendors customer customers climber climbers swimmer swimmers fisherman
fishermen doctor doctors nurse nurses driver drivers walker walkers hiker hikers
""".split())

DETERMINERS = frozenset("""
a an the this that these those his her their its my our your some several many
two three four five six seven eight nine ten one another other each every few
""".split())

PREPOSITIONS = frozenset("""
on in at with into onto near by under over behind beside above below across
along through toward towards from to of for around inside outside against
between up down off out next during past
""".split())

BOUNDARY_WORDS = frozenset("""
and or but while as who that which where when because then so
""".split())

AUXILIARIES = frozenset("is are was were be being been has have had does do did".split())

# common modifiers; a verb form right after one of these is read as a noun ("a large bat")
ADJECTIVES = frozenset("""
red blue green white black yellow brown orange pink purple gray grey large small big little
old young wooden tall long short new metal plastic
""".split())

ADVERBS = frozenset("""
happily quickly slowly carefully together also still just really gently
""".split())

# Particles and prepositions kept as part of the relation when they directly
# follow the verb, e.g. "sits on", "looks at".
RELATION_PARTICLES = frozenset("""
on at with into onto in from off up down over under across through to behind
""".split())

# base form -> irregular inflections
IRREGULAR = {
    "ride": ("rode", "ridden"),
    "drive": ("drove", "driven"),
    "hold": ("held",),
    "throw": ("threw", "thrown"),
    "catch": ("caught",),
    "eat": ("ate", "eaten"),
    "drink": ("drank", "drunk"),
    "fly": ("flew", "flown", "flies"),
    "sit": ("sat",),
    "read": (),
    "hit": (),
    "cut": (),
    "swing": ("swung",),
    "feed": ("fed",),
    "lead": ("led",),
    "wear": ("wore", "worn"),
    "take": ("took", "taken"),
    "make": ("made",),
    "buy": ("bought",),
    "bring": ("brought",),
    "carry": ("carried", "carries"),
    "hug": ("hugged", "hugging"),
    "stir": ("stirred", "stirring"),
    "sell": ("sold",),
    "build": ("built",),
    "blow": ("blew", "blown"),
    "dig": ("dug", "digging"),
    "run": ("ran", "running"),
    "swim": ("swam", "swimming"),
    "hang": ("hung",),
    "lie": ("lay", "lying"),
    "stand": ("stood",),
    "grab": ("grabbed", "grabbing"),
    "pet": ("petted", "petting"),
    "shop": ("shopped", "shopping"),
    "stop": ("stopped", "stopping"),
    "drag": ("dragged", "dragging"),
    "kneel": ("knelt",),
    "see": ("saw", "seen"),
    "watch": ("watches",),
    "wash": ("washes",),
    "brush": ("brushes",),
    "push": ("pushes",),
    "fix": ("fixes",),
    "teach": ("taught", "teaches"),
    "sing": ("sang", "sung"),
    "climb": (),
    "paint": (),
}

VERBS = frozenset("""
ride drive hold throw catch eat drink fly sit read hit cut swing feed lead wear
take make buy bring carry hug stir sell build blow dig run swim hang lie stand
grab pet shop stop drag kneel see watch wash brush push fix teach sing climb
paint kick pull play walk cook chase hold lift open close use type talk look
pour serve surf ski skate skateboard snowboard jump kiss touch pick clean wave
fill load repair check sign carve slice peel milk herd hunt board exit enter
adjust hold inspect point row sail paddle juggle toss pitch bat dribble block
tie pack wrap dry spray smell lick greet shake hose operate steer pedal
""".split())


# short verbs that double their final consonant before -ing/-ed
DOUBLING = frozenset("sit hit cut swim run dig hug stir grab pet shop stop drag bat jog chop".split())


def _regular_forms(base: str):
    forms = set()
    if base.endswith("e"):
        forms.update({base + "s", base[:-1] + "ing", base + "d"})
    elif base.endswith("y") and len(base) > 2 and base[-2] not in "aeiou":
        forms.update({base[:-1] + "ies", base + "ing", base[:-1] + "ied"})
    elif base.endswith(("s", "sh", "ch", "x", "z")):
        forms.update({base + "es", base + "ing", base + "ed"})
    else:
        forms.update({base + "s", base + "ing", base + "ed"})
    return forms


def build_verb_forms(verbs=VERBS, irregular=IRREGULAR):
    """Map every known inflected form to its base form."""
    table = {}
    for base in sorted(verbs):
        for form in _regular_forms(base) | {base}:
            table.setdefault(form, base)
        for form in irregular.get(base, ()):
            table[form] = base
    for base in DOUBLING:
        table[base + base[-1] + "ing"] = base
        table[base + base[-1] + "ed"] = base
    table["seeing"] = "see"
    table["tying"] = "tie"
    return table


VERB_FORMS = build_verb_forms()
