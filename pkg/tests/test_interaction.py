from __future__ import annotations

import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from crossview.core import Box2D, Box3D, CameraModel, Label, OddChannelError
from crossview.encoder import ShapeError
from crossview.interaction import (
    CostTerms,
    DepthAwareDecoder,
    Detector,
    EncoderBlock,
    HeadOutputs,
    InfeasibleError,
    MatchResult,
    ModelConfig,
    PredictionHeads,
    SequenceEncoder,
    Targets,
    cost_terms,
    decode_predictions,
    hungarian,
    matching_cost,
    pair_loss,
    sine_position_embedding,
)
from crossview.interaction.matcher import EmptyGTError


def _targets(dtype: torch.dtype = torch.float64) -> Targets:
    return Targets(
        labels=torch.zeros(2, dtype=torch.long),
        box2d=torch.tensor([[0.3, 0.4, 0.2, 0.1], [0.7, 0.5, 0.1, 0.2]], dtype=dtype),
        center=torch.tensor([[0.31, 0.42], [0.69, 0.52]], dtype=dtype),
        dims=torch.tensor([[1.5, 1.8, 4.2], [1.6, 1.9, 4.5]], dtype=dtype),
        orientation=torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=dtype),
        depth=torch.tensor([15.0, 32.0], dtype=dtype),
    )


def _predictions(n: int, dtype: torch.dtype = torch.float64) -> HeadOutputs:
    return HeadOutputs(
        logits=torch.randn(n, 2, dtype=dtype),
        box2d=torch.cat((torch.rand(n, 2, dtype=dtype) * 0.6 + 0.2, torch.rand(n, 2, dtype=dtype) * 0.2 + 0.05), 1),
        center=torch.rand(n, 2, dtype=dtype),
        dims=torch.rand(n, 3, dtype=dtype) + 1.0,
        orientation=torch.randn(n, 2, dtype=dtype),
        depth=torch.rand(n, dtype=dtype) * 40 + 5,
    )


def _empty(gt: Targets) -> Targets:
    return Targets(gt.labels[:0], gt.box2d[:0], gt.center[:0], gt.dims[:0], gt.orientation[:0], gt.depth[:0])


def _exact(gt: Targets, assignment: list, n: int) -> HeadOutputs:
    """Predictions that reproduce the objects exactly on the assigned queries."""
    pred = _predictions(n)
    pred.logits = torch.tensor([[-20.0, 20.0]] * n, dtype=torch.float64)
    for k, q in enumerate(assignment):
        pred.logits[q] = torch.tensor([20.0, -20.0])
        pred.box2d[q] = gt.box2d[k]
        pred.center[q] = gt.center[k]
        pred.dims[q] = gt.dims[k]
        pred.orientation[q] = gt.orientation[k]
        pred.depth[q] = gt.depth[k]
    return pred


# ------------------------------------------------------------------ transformer


def test_sine_embedding_shape_and_channel_rule() -> None:
    assert sine_position_embedding(3, 5, 16).shape == (15, 16)
    with pytest.raises(ShapeError):
        sine_position_embedding(3, 5, 18)


def test_content_encoder_sequence_length() -> None:
    encoder = SequenceEncoder(16, 2, 2, 32)
    assert encoder(torch.rand(2, 16, 4, 6)).shape == (2, 24, 16)


def test_attention_rows_sum_to_one() -> None:
    weights = EncoderBlock(16, 2, 32).attention_weights(torch.rand(1, 10, 16))
    assert torch.allclose(weights.sum(-1), torch.ones(1, 10), atol=1e-6)


def test_encoder_is_permutation_equivariant() -> None:
    encoder = SequenceEncoder(16, 2, 2, 32).eval()
    x = torch.rand(1, 12, 16) + sine_position_embedding(3, 4, 16)
    perm = torch.randperm(12)
    with torch.no_grad():
        assert torch.allclose(encoder.encode_sequence(x)[:, perm], encoder.encode_sequence(x[:, perm]), atol=1e-5)


def test_single_block_depth_encoder_is_smaller() -> None:
    count = lambda m: sum(p.numel() for p in m.parameters())  # noqa: E731
    assert count(SequenceEncoder(16, 1, 2, 32)) < count(SequenceEncoder(16, 3, 2, 32))


def _decoder_inputs():
    return (
        torch.rand(1, 5, 16),
        torch.rand(1, 12, 16),
        torch.rand(1, 12, 16),
        torch.randn(1, 9, 3, 4),
    )


def test_decoder_shapes_and_live_depth_path() -> None:
    decoder = DepthAwareDecoder(16, 2, 2, 32, 8).eval()
    queries, content, depth, logits = _decoder_inputs()
    with torch.no_grad():
        final, intermediate = decoder(queries, content, depth, logits, (3, 4))
        ablated, _ = decoder(queries, content, torch.zeros_like(depth), logits, (3, 4))
    assert final.shape == (1, 5, 16)
    assert len(intermediate) == 2
    assert torch.equal(intermediate[-1], final)
    assert (final - ablated).norm().item() > 0


def test_decoder_is_query_permutation_equivariant() -> None:
    decoder = DepthAwareDecoder(16, 2, 2, 32, 8).eval()
    queries, content, depth, logits = _decoder_inputs()
    perm = torch.tensor([3, 0, 4, 1, 2])
    with torch.no_grad():
        out, _ = decoder(queries, content, depth, logits, (3, 4))
        permuted, _ = decoder(queries[:, perm], content, depth, logits, (3, 4))
    assert torch.allclose(out[:, perm], permuted, atol=1e-5)


def test_decoder_rejects_channel_mismatch() -> None:
    decoder = DepthAwareDecoder(16, 1, 2, 32, 8)
    queries, content, depth, logits = _decoder_inputs()
    with pytest.raises(ShapeError):
        decoder(torch.rand(1, 5, 8), content, depth, logits, (3, 4))


# ------------------------------------------------------------------ heads


def test_heads_read_their_own_half() -> None:
    heads = PredictionHeads(8).eval()
    queries = torch.randn(4, 8)
    base = heads(queries)

    geometry = queries.clone()
    geometry[:, 4:] += 1.0
    assert torch.equal(heads(geometry).logits, base.logits)

    semantic = queries.clone()
    semantic[:, :4] += 1.0
    changed = heads(semantic)
    for name in ("box2d", "center", "dims", "orientation", "depth"):
        assert torch.equal(getattr(changed, name), getattr(base, name))


def test_heads_decode_ranges() -> None:
    out = PredictionHeads(8)(torch.randn(3, 7, 8) * 50)
    assert (out.dims > 0).all()
    assert ((out.box2d >= 0) & (out.box2d <= 1)).all()
    assert ((out.depth >= 2.0) & (out.depth <= 65.0)).all()
    assert out.logits.shape == (3, 7, 2)


def test_odd_channels_rejected() -> None:
    with pytest.raises(OddChannelError):
        PredictionHeads(7)
    with pytest.raises(OddChannelError):
        ModelConfig(channels=15)
    with pytest.raises(ValueError):
        ModelConfig(channels=20, heads=3)


# ------------------------------------------------------------------ matching


def test_matching_cost_hand_case() -> None:
    terms = CostTerms(
        cls=torch.tensor([[0.1]]),
        center=torch.tensor([[0.05]]),
        edge=torch.tensor([[0.04]]),
        giou=torch.tensor([[0.2]]),
    )
    assert terms.total().item() == pytest.approx(1.3)


def test_perfect_prediction_is_row_minimum() -> None:
    gt = _targets()
    pred = _exact(gt, [2, 0], 3)
    pred.logits = torch.tensor([[5.0, -5.0]] * 3, dtype=torch.float64)
    cost = matching_cost(pred, gt)
    assert int(cost[:, 0].argmin()) == 2
    assert int(cost[:, 1].argmin()) == 0
    assert hungarian(cost).assignment.tolist() == [2, 0]


def test_assignment_is_invariant_to_weight_scale() -> None:
    pred, gt = _predictions(6), _targets()
    terms = cost_terms(pred, gt)
    weights = (2.0, 10.0, 5.0, 2.0)
    scaled = tuple(3.0 * w for w in weights)
    assert hungarian(terms.total(weights)).assignment.tolist() == hungarian(terms.total(scaled)).assignment.tolist()


def test_empty_ground_truth_cost() -> None:
    with pytest.raises(EmptyGTError):
        cost_terms(_predictions(3), _empty(_targets()))


def test_hungarian_small_example() -> None:
    result = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert result.assignment.tolist() == [0, 1]
    assert result.total_cost == 2.0


def test_hungarian_ties_prefer_low_queries() -> None:
    assert sorted(hungarian(np.zeros((3, 3))).assignment.tolist()) == [0, 1, 2]
    assert sorted(hungarian(np.ones((5, 2))).assignment.tolist()) == [0, 1]
    assert hungarian(np.array([[1.0], [1.0], [0.5], [0.5]])).assignment.tolist() == [2]


def test_hungarian_matches_brute_force() -> None:
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 7))
        k = int(rng.integers(1, n + 1))
        cost = rng.random((n, k))
        best = min(sum(cost[q, j] for j, q in enumerate(p)) for p in itertools.permutations(range(n), k))
        result = hungarian(cost)
        assert result.total_cost == pytest.approx(best)
        assert len(set(result.assignment.tolist())) == k
        assert hungarian(cost * 7.5).assignment.tolist() == result.assignment.tolist()


def test_hungarian_edge_cases() -> None:
    with pytest.raises(InfeasibleError):
        hungarian(np.zeros((2, 3)))
    empty = hungarian(np.zeros((4, 0)))
    assert empty.assignment.size == 0
    assert empty.unmatched().tolist() == [0, 1, 2, 3]


# ------------------------------------------------------------------ pair loss


def test_pair_loss_of_exact_prediction() -> None:
    gt = _targets()
    pred = _exact(gt, [2, 0], 3)
    match = MatchResult(np.array([2, 0]), np.zeros((3, 2)))
    loss = pair_loss(pred, gt, match)
    assert loss.count == 2
    for name in ("l_3d", "l_edge", "l_giou", "l_dim", "l_ori", "l_depth"):
        assert getattr(loss, name).item() == pytest.approx(0.0, abs=1e-9)
    assert loss.total().item() < 1e-4


def test_pair_loss_gradient() -> None:
    gt = _targets()
    pred = _predictions(3)
    match = MatchResult(np.array([1, 2]), np.zeros((3, 2)))
    inputs = tuple(t.detach().requires_grad_(True) for t in (
        pred.logits, pred.box2d, pred.center, pred.dims, pred.orientation, pred.depth
    ))

    def total(*tensors: torch.Tensor) -> torch.Tensor:
        return pair_loss(HeadOutputs(*tensors), gt, match).total()

    assert torch.autograd.gradcheck(total, inputs, eps=1e-6, atol=1e-5, rtol=1e-4)


def test_pair_loss_without_objects_is_only_no_object() -> None:
    loss = pair_loss(_predictions(4), _empty(_targets()), hungarian(np.zeros((4, 0))))
    assert loss.count == 0
    assert loss.l_noobj.item() > 0
    assert loss.total().item() == pytest.approx(2.0 * loss.l_noobj.item())


def test_targets_from_labels(camera: CameraModel) -> None:
    box = Box3D(center=(1.0, 0.0, 10.0), dims=(1.5, 1.8, 4.0), yaw=math.pi / 2)
    label = Label(box3d=box, box2d=Box2D(0.58, 0.5, 0.2, 0.1), object_id=0, albedo=(0.5, 0.5, 0.5))
    gt = Targets.from_labels([label], camera)
    assert gt.count == 1
    assert gt.center[0].tolist() == pytest.approx([0.578125, 0.5])
    assert gt.orientation[0].tolist() == pytest.approx([1.0, 0.0], abs=1e-7)
    assert gt.depth.tolist() == [10.0]


# ------------------------------------------------------------------ detector


def test_detector_forward_shapes(tiny_model: ModelConfig) -> None:
    out = Detector(tiny_model)(torch.rand(2, 3, 64, 96))
    assert out.heads.logits.shape == (2, 12, 2)
    assert out.queries.shape == (2, 12, 16)
    assert out.depth_logits.shape == (2, 9, 4, 6)
    assert out.aux == ()


def test_detector_aux_outputs(tiny_model: ModelConfig) -> None:
    config = replace(tiny_model, aux_loss=True)
    out = Detector(config)(torch.rand(1, 3, 64, 64))
    assert len(out.aux) == config.decoder_blocks - 1


def _frame_with_scores(scores: list) -> HeadOutputs:
    n = len(scores)
    p = torch.tensor(scores, dtype=torch.float64)
    return HeadOutputs(
        logits=torch.stack((p.log(), (1 - p).log()), dim=1),
        box2d=torch.tensor([[0.5, 0.5, 0.2, 0.2]] * n, dtype=torch.float64),
        center=torch.tensor([[0.5, 0.5]] * n, dtype=torch.float64),
        dims=torch.tensor([[1.5, 1.8, 4.0]] * n, dtype=torch.float64),
        orientation=torch.tensor([[0.0, 1.0]] * n, dtype=torch.float64),
        depth=torch.full((n,), 20.0, dtype=torch.float64),
    )


def test_decode_predictions_threshold_without_nms(camera: CameraModel) -> None:
    dets = decode_predictions(_frame_with_scores([0.9, 0.19, 0.21]), camera, 0.2)
    assert sorted(round(d.score, 2) for d in dets) == [0.21, 0.9]
    # identical boxes are both kept
    assert dets[0].box3d == dets[1].box3d
    assert dets[0].box3d.center == pytest.approx((0.0, 0.0, 20.0))
    assert dets[0].box3d.yaw == pytest.approx(0.0)
