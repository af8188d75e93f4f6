import math

import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_image, tiny_model
from hoi_pretrain.branches import (
    CaptionAlignmentBatch,
    caption_alignment_loss,
    fuse_verb_predictions,
    fused_verb_loss,
    reduce_detection_terms,
    run_caption_batch,
    run_detection_branch,
    run_verb_branch_image,
    run_verb_branch_video,
    sample_frame_indices,
    select_rpq,
)
from hoi_pretrain.captions import HashingTextEncoder, build_negative_bank, embed_texts
from hoi_pretrain.config import LossWeights, ModelConfig
from hoi_pretrain.data import (
    DatasetSpec,
    build_dn_queries,
    generate_synthetic_actions,
    generate_synthetic_captions,
    generate_synthetic_detection,
)
from hoi_pretrain.losses import compose_total
from hoi_pretrain.model import HOIPretrainModel, Predictions
from hoi_pretrain.training import evaluate

f64 = torch.float64


def logits_for_person_scores(scores, num_classes=4):
    """Object logits whose softmax person score (class 0) equals each entry."""
    rows = []
    for p in scores:
        rest = (1 - p) / (num_classes - 1)
        rows.append([math.log(p)] + [math.log(rest)] * (num_classes - 1))
    return torch.tensor(rows, dtype=f64)


def force_person_score(model, score):
    """Make every query's person score equal ``score`` by zeroing the class head."""
    k = model.heads["object"].out_features
    with torch.no_grad():
        model.heads["object"].weight.zero_()
        bias = model.heads["object"].bias
        bias.zero_()
        bias[model.config.person_class_id] = math.log(score * (k - 1) / (1 - score))


# ---------------------------------------------------------------------------
# detection branch

def test_image_without_boxes_matches_everything_to_no_object():
    model = tiny_model()
    out = run_detection_branch(model, random_image(0), np.zeros((0, 4)), np.zeros(0, dtype=int))
    terms = out.terms()
    assert out.match.pairs == [] and out.match.unmatched_queries == [0, 1, 2]
    assert float(terms["L_b"]) == 0.0 and float(terms["L_g"]) == 0.0
    assert float(terms["L_c"].detach()) > 0.0


def test_single_box_matches_exactly_one_query():
    model = tiny_model()
    out = run_detection_branch(model, random_image(1), [[0.5, 0.5, 0.2, 0.2]], [1])
    assert len(out.match.pairs) == 1
    assert len(out.match.unmatched_queries) == 2


def test_batch_reduction_normalizes_by_pairs_and_weights():
    model = tiny_model()
    a = run_detection_branch(model, random_image(2), [[0.5, 0.5, 0.2, 0.2]], [1])
    b = run_detection_branch(model, random_image(3), [[0.3, 0.3, 0.1, 0.2], [0.7, 0.6, 0.2, 0.1]], [0, 2])
    terms = reduce_detection_terms([a, b])
    la, lb = a.layers[0], b.layers[0]
    np.testing.assert_allclose(terms["L_b"].item(), ((la.l1_sum + lb.l1_sum) / 3).item(), atol=1e-12)
    np.testing.assert_allclose(terms["L_c"].item(), ((la.ce_num + lb.ce_num) / (la.ce_den + lb.ce_den)).item(),
                               atol=1e-12)


def test_auxiliary_layers_add_their_own_terms():
    model = tiny_model(num_decoder_layers=2, aux_loss=True)
    out = run_detection_branch(model, random_image(4), [[0.5, 0.5, 0.2, 0.2]], [1])
    assert len(out.layers) == 2


@pytest.mark.slow
def test_single_image_detection_overfit():
    torch.manual_seed(0)
    record = [r for r in generate_synthetic_detection(20, (2, 2), 32, seed=0) if len(r.labels) == 2][0]
    model = HOIPretrainModel(ModelConfig(num_queries=10))
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=1e-4)
    for _ in range(300):
        out = run_detection_branch(model, record.image, record.boxes, record.labels)
        total = compose_total(out.terms()).total
        optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        optimizer.step()
    metrics = evaluate(model, [record])
    assert metrics["det_class_acc"] == 1.0
    assert metrics["det_mean_iou"] > 0.75


@pytest.mark.slow
def test_noise_free_denoising_loss_matches_matched_pair_loss_after_overfit():
    torch.manual_seed(0)
    record = [r for r in generate_synthetic_detection(20, (2, 2), 32, seed=0) if len(r.labels) == 2][0]
    model = HOIPretrainModel(ModelConfig(num_queries=10))
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=1e-4)
    generator = torch.Generator().manual_seed(0)
    noisy = lambda b, l: build_dn_queries(b, l, model.dn, 0.4, 0.2, 3, generator)
    for _ in range(300):
        out = run_detection_branch(model, record.image, record.boxes, record.labels, dn_group_builder=noisy)
        objective = compose_total(out.terms(), dn=out.dn_loss).objective
        optimizer.zero_grad()
        objective.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        optimizer.step()
    exact = lambda b, l: build_dn_queries(b, l, model.dn, 0.0, 0.0)
    with torch.no_grad():
        out = run_detection_branch(model, record.image, record.boxes, record.labels, dn_group_builder=exact)
        terms, w = out.terms(), LossWeights()
        queries = [q for q, _ in out.match.pairs]
        targets = torch.as_tensor(record.labels)[[t for _, t in out.match.pairs]]
        ce = torch.nn.functional.cross_entropy(out.predictions.object_logits[queries], targets)
        matched = float(w.box * terms["L_b"] + w.giou * terms["L_g"] + w.cls * ce)
    # seed 0 gives 0.161 against 0.151
    assert matched < 0.3
    assert abs(float(out.dn_loss) - matched) < 0.25 * matched


# ---------------------------------------------------------------------------
# RPQ selection

def test_rpq_threshold_example():
    preds = Predictions(object_logits=logits_for_person_scores([0.95, 0.30, 0.91]))
    embeddings = torch.arange(3 * 4, dtype=f64).reshape(3, 4)
    rpq = select_rpq(preds, 0.9, embeddings)
    assert rpq.indices.tolist() == [0, 2]
    np.testing.assert_array_equal(rpq.queries.numpy(), embeddings[[0, 2]].numpy())
    np.testing.assert_allclose(rpq.person_scores.numpy(), [0.95, 0.91], atol=1e-12)


def test_rpq_empty_when_all_scores_are_low():
    preds = Predictions(object_logits=logits_for_person_scores([0.5, 0.2]))
    rpq = select_rpq(preds, 0.9, torch.zeros(2, 4))
    assert rpq.empty and len(rpq) == 0


def test_rpq_rejects_person_class_outside_label_space():
    preds = Predictions(object_logits=torch.zeros(2, 4))
    with pytest.raises(ValueError):
        select_rpq(preds, 0.9, torch.zeros(2, 4), person_class_id=3)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(4)), elements=st.floats(-6, 6)),
       st.sampled_from([0.5, 0.9, 0.99]))
def test_rpq_invariants(logits, threshold):
    preds = Predictions(object_logits=torch.as_tensor(logits))
    rpq = select_rpq(preds, threshold, torch.as_tensor(logits))
    idx = rpq.indices.tolist()
    assert idx == sorted(set(idx))
    assert len(idx) <= logits.shape[0]
    assert all(s > threshold for s in rpq.person_scores.tolist())


# ---------------------------------------------------------------------------
# fusion

def test_fusion_examples():
    scores = torch.tensor([[0.9, 0.1], [0.2, 0.8]], dtype=f64)
    np.testing.assert_allclose(fuse_verb_predictions(scores, "max").scores.numpy(), [0.9, 0.8])
    np.testing.assert_allclose(fuse_verb_predictions(scores, "avg").scores.numpy(), [0.55, 0.45], atol=1e-15)
    fused = fuse_verb_predictions(scores, "none")
    assert fused.scores is scores and fused.source_count == 2


def test_single_row_is_unchanged_in_every_mode():
    row = torch.tensor([[0.3, 0.7, 0.1]], dtype=f64)
    for mode in ("max", "avg"):
        np.testing.assert_array_equal(fuse_verb_predictions(row, mode).scores.numpy(), row[0].numpy())
    np.testing.assert_array_equal(fuse_verb_predictions(row, "none").scores.numpy(), row.numpy())


def test_fusion_rejects_empty_input_and_unknown_modes():
    with pytest.raises(ValueError):
        fuse_verb_predictions(torch.zeros(0, 3), "max")
    with pytest.raises(ValueError):
        fuse_verb_predictions(torch.zeros(2, 3), "median")


def test_three_variants_coincide_for_one_person():
    row = torch.tensor([[0.3, 0.7, 0.1, 0.6]], dtype=f64)
    target = torch.tensor([0.0, 1.0, 0.0, 0.0])
    mask = torch.tensor([True, True, True, False])
    losses = [float(fused_verb_loss(row, target, mask, mode)) for mode in ("max", "avg", "none")]
    assert losses[0] == losses[1] == losses[2]


score_matrices = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(score_matrices, st.randoms(use_true_random=False))
def test_fusion_is_permutation_invariant(matrix, rnd):
    perm = list(range(matrix.shape[0]))
    rnd.shuffle(perm)
    a, b = torch.as_tensor(matrix), torch.as_tensor(matrix[perm])
    np.testing.assert_array_equal(fuse_verb_predictions(a, "max").scores.numpy(),
                                  fuse_verb_predictions(b, "max").scores.numpy())
    np.testing.assert_allclose(fuse_verb_predictions(a, "avg").scores.numpy(),
                               fuse_verb_predictions(b, "avg").scores.numpy(), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(score_matrices, st.data())
def test_adding_a_row_never_lowers_max_fusion(matrix, data):
    extra = np.asarray(data.draw(st.lists(st.floats(0, 1), min_size=matrix.shape[1], max_size=matrix.shape[1])))
    before = fuse_verb_predictions(torch.as_tensor(matrix), "max").scores
    after = fuse_verb_predictions(torch.as_tensor(np.vstack([matrix, extra])), "max").scores
    assert torch.all(after >= before)


# ---------------------------------------------------------------------------
# verb branch

def _action_record(seed=0, verbs=(0, 1, 2, 3, 4)):
    spec = DatasetSpec("act", "action_image", verbs)
    return generate_synthetic_actions(1, list(verbs), seed=seed, canvas=32, spec=spec)[0]


def test_verb_branch_skips_without_reliable_person():
    model = tiny_model()
    force_person_score(model, 0.5)
    out = run_verb_branch_image(model, _action_record())
    assert out.skipped and out.loss is None and out.rpq_counts == [0]


def test_verb_branch_runs_with_reliable_person():
    model = tiny_model()
    force_person_score(model, 0.95)
    out = run_verb_branch_image(model, _action_record())
    assert not out.skipped
    assert out.rpq_counts == [3]
    assert out.fused.scores.shape == (5,)
    assert float(out.loss.detach()) > 0


def test_verb_loss_decreases_every_step_when_overfitting_one_image():
    record = _action_record(0, (0, 1, 2, 3, 4, 5))
    torch.manual_seed(0)
    model = HOIPretrainModel(ModelConfig(num_queries=10))
    force_person_score(model, 0.95)
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3, weight_decay=1e-4)
    losses = []
    for _ in range(50):
        out = run_verb_branch_image(model, record)
        optimizer.zero_grad()
        out.loss.backward()
        optimizer.step()
        losses.append(float(out.loss.detach()))
    assert np.all(np.diff(losses) < 0)


def test_masked_verb_logits_get_zero_finite_difference():
    model = tiny_model()
    force_person_score(model, 0.95)
    spec = DatasetSpec("act", "action_image", (0, 1, 2))
    record = generate_synthetic_actions(1, [0, 1, 2], seed=3, spec=spec)[0]
    bias = model.heads["verb"].layers[-1].bias
    base = float(run_verb_branch_image(model, record).loss.detach())
    for cls in (3, 4):
        with torch.no_grad():
            bias[cls] += 1e-3
        moved = float(run_verb_branch_image(model, record).loss.detach())
        with torch.no_grad():
            bias[cls] -= 1e-3
        assert moved == base


def test_video_fusion_concatenates_frames_before_pooling():
    frames = [torch.tensor([[0.9, 0.1]], dtype=f64), torch.tensor([[0.2, 0.8]], dtype=f64)]
    np.testing.assert_allclose(fuse_verb_predictions(torch.cat(frames), "max").scores.numpy(), [0.9, 0.8])


def test_max_fusion_gradient_reaches_only_each_column_winner():
    scores = torch.tensor([[0.9, 0.1], [0.2, 0.8]], dtype=f64, requires_grad=True)
    loss = fused_verb_loss(scores, torch.tensor([1.0, 0.0]), torch.tensor([True, True]))
    loss.backward()
    grad = scores.grad.numpy()
    assert grad[0, 0] != 0 and grad[1, 1] != 0
    assert grad[0, 1] == 0 and grad[1, 0] == 0
    # finite differences agree, including the zeros on losing entries
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        h = 1e-6
        bumped = scores.detach().clone()
        bumped[i, j] += h
        up = float(fused_verb_loss(bumped, torch.tensor([1.0, 0.0]), torch.tensor([True, True])))
        bumped[i, j] -= 2 * h
        down = float(fused_verb_loss(bumped, torch.tensor([1.0, 0.0]), torch.tensor([True, True])))
        np.testing.assert_allclose((up - down) / (2 * h), grad[i, j], atol=1e-8)


def test_short_videos_sample_frames_with_replacement():
    rng = np.random.default_rng(0)
    picks = sample_frame_indices(2, 4, rng)
    assert len(picks) == 4 and set(picks) <= {0, 1}
    picks = sample_frame_indices(10, 4, rng)
    assert len(set(picks)) == 4
    with pytest.raises(ValueError):
        sample_frame_indices(0, 4, rng)


def test_video_branch_fuses_all_frames_once():
    model = tiny_model()
    force_person_score(model, 0.95)
    spec = DatasetSpec("vid", "action_video", (0, 1, 2, 3, 4))
    video = generate_synthetic_actions(1, [0, 1, 2, 3, 4], kind="video", num_frames=3, seed=0,
                                       spec=spec)[0]
    assert video.frames.shape[0] == 3
    out = run_verb_branch_video(model, video, num_frames=4, rng=np.random.default_rng(0))
    assert not out.skipped
    assert out.rpq_counts == [3, 3, 3, 3]
    assert out.fused.source_count == 12


def test_video_branch_skips_when_every_frame_is_empty():
    model = tiny_model()
    force_person_score(model, 0.2)
    spec = DatasetSpec("vid", "action_video", (0, 1))
    video = generate_synthetic_actions(1, [0, 1], kind="video", seed=0, spec=spec)[0]
    out = run_verb_branch_video(model, video, num_frames=2)
    assert out.skipped and out.loss is None


# ---------------------------------------------------------------------------
# caption branch

def _unit(v):
    v = torch.as_tensor(v, dtype=f64)
    return v / v.norm()


def test_caption_selects_most_similar_rpq():
    positive = _unit([1.0, 0.0, 0.0])
    rpq = torch.stack([_unit([0.9, math.sqrt(1 - 0.81), 0.0]), _unit([0.2, math.sqrt(1 - 0.04), 0.0])])
    batch = CaptionAlignmentBatch(rpq, positive, torch.zeros(0, 3, dtype=f64), 0.07)
    np.testing.assert_allclose(batch.similarities().numpy(), [0.9, 0.2], atol=1e-12)
    assert batch.selected_index() == 0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-1, 1)), st.floats(0.1, 50))
def test_caption_selection_is_scale_invariant(raw, scale):
    rows = torch.as_tensor(raw) + 1e-3
    positive = _unit(np.arange(1, 7))
    normalize = torch.nn.functional.normalize
    a = CaptionAlignmentBatch(normalize(rows, dim=-1), positive, torch.zeros(0, 6), 0.07)
    # near-ties are decided by rounding, not by direction
    top2 = torch.topk(a.similarities(), 2).values
    assume(float(top2[0] - top2[1]) > 1e-9)
    b = CaptionAlignmentBatch(normalize(rows * scale, dim=-1), positive, torch.zeros(0, 6), 0.07)
    assert a.selected_index() == b.selected_index()


def test_caption_loss_with_orthogonal_negatives():
    dim = 11
    positive = torch.zeros(dim, dtype=f64)
    positive[0] = 1.0
    negatives = torch.eye(dim, dtype=f64)[1:]
    batch = CaptionAlignmentBatch(positive[None], positive, negatives, 0.07)
    loss, j = caption_alignment_loss(batch)
    assert j == 0
    expected = -math.log(math.exp(1 / 0.07) / (math.exp(1 / 0.07) + 10))
    np.testing.assert_allclose(float(loss), expected, rtol=1e-9)
    np.testing.assert_allclose(float(loss), 6.2487e-6, rtol=1e-4)


def test_caption_loss_is_symmetric_with_shared_negatives():
    positive = _unit([1.0, 0.5, 0.0])
    z = _unit([0.8, 0.1, 0.3])
    negs = torch.stack([_unit([0.0, 1.0, 0.0]), _unit([0.3, -0.2, 0.9])])
    batch = CaptionAlignmentBatch(z[None], positive, negs, 0.1)
    loss, _ = caption_alignment_loss(batch)
    logits = torch.cat([(z @ positive).reshape(1), negs @ z]) / 0.1
    one_direction = float(-torch.log_softmax(logits, 0)[0])
    np.testing.assert_allclose(float(loss), one_direction, atol=1e-12)


def test_caption_batch_uses_other_samples_as_image_negatives():
    model = tiny_model(proj_dim=8)
    force_person_score(model, 0.95)
    samples = generate_synthetic_captions(3, seed=0, canvas=32)
    ids = [t for s in samples for t in s.triplet_ids]
    prompts = [f"a photo of {t.human} {t.verb} {t.object}" for s in samples for t in s.triplets]
    encoder = HashingTextEncoder(8)
    bank = build_negative_bank(embed_texts(prompts, encoder), 2, 10, 0, ids, prompts)
    outcomes = run_caption_batch(model, samples, bank, encoder)
    assert [o.skipped for o in outcomes] == [False, False, False]
    for o, s in zip(outcomes, samples):
        assert o.num_triplets == len(s.triplets)
        assert all(0 <= j < 3 for j in o.selected)
        assert np.isfinite(float(o.loss.detach()))
    single = run_caption_batch(model, samples[:1], bank, encoder)[0]
    assert float(single.loss.detach()) != float(outcomes[0].loss.detach())


def test_caption_branch_skips_without_reliable_person():
    model = tiny_model(proj_dim=8)
    force_person_score(model, 0.3)
    samples = generate_synthetic_captions(1, seed=1, canvas=32)
    prompts = ["a photo of man ride horse"]
    bank = build_negative_bank(embed_texts(prompts, HashingTextEncoder(8)), 1, 10, 0, ["x"], prompts)
    out = run_caption_batch(model, samples, bank, HashingTextEncoder(8))[0]
    assert out.skipped and out.loss is None
