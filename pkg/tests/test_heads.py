import numpy as np
import pytest

from meltshift.data import EmbeddingBundle
from meltshift.errors import ConfigError, DataError
from meltshift.gradcheck import check_model
from meltshift.heads import (
    HeadKind,
    HeadParams,
    LinearParams,
    TrackProjection,
    ablation_head_predict,
    build_ensemble,
    build_model,
    build_single_head,
    ensemble_predict,
    head1_predict,
    head2_features,
    head2_predict,
    project_and_fuse,
)

SEQ_ROLES = ("seq_cls", "seq_pos")
ALL_ROLES = ("seq_cls", "seq_pos", "struct_cls", "struct_pos", "avg")


def random_bundle(vid, d_raw, seed, roles=ALL_ROLES):
    rng = np.random.default_rng(seed)
    return EmbeddingBundle(vid, {r: rng.normal(size=d_raw) for r in roles})


def identity_projection(d, roles):
    layers = {r: LinearParams(np.eye(d), np.zeros(d)) for r in roles}
    return TrackProjection(("seq",), d, d, layers)


class TestProjectAndFuse:
    def test_single_track_width(self):
        proj = TrackProjection.create(("seq",), 12, 8, np.random.default_rng(0),
                                      cls_roles=True, pos_roles=True)
        bw = random_bundle("X:WT", 12, 1, SEQ_ROLES)
        bm = random_bundle("X:M", 12, 2, SEQ_ROLES)
        out = project_and_fuse(bw, bm, proj)
        assert all(v.shape == (8,) for v in out)

    def test_two_track_width_is_2_dproj(self):
        proj = TrackProjection.create(("struct", "seq"), 12, 8,
                                      np.random.default_rng(0),
                                      cls_roles=True, pos_roles=True)
        bw = random_bundle("X:WT", 12, 1)
        bm = random_bundle("X:M", 12, 2)
        out = project_and_fuse(bw, bm, proj)
        assert all(v.shape == (16,) for v in out)

    def test_identity_projection_returns_raw(self):
        proj = identity_projection(5, SEQ_ROLES)
        bw = random_bundle("X:WT", 5, 1, SEQ_ROLES)
        bm = random_bundle("X:M", 5, 2, SEQ_ROLES)
        cls_w, cls_m, a_w, a_m = project_and_fuse(bw, bm, proj)
        assert np.array_equal(cls_w, bw.tracks["seq_cls"])
        assert np.array_equal(cls_m, bm.tracks["seq_cls"])
        assert np.array_equal(a_w, bw.tracks["seq_pos"])
        assert np.array_equal(a_m, bm.tracks["seq_pos"])

    def test_track_set_mismatch_names_variant_and_track(self):
        proj = TrackProjection.create(("seq",), 5, 4, np.random.default_rng(0),
                                      cls_roles=True, pos_roles=True)
        bw = random_bundle("X:WT", 5, 1, SEQ_ROLES)
        bm = random_bundle("X:M", 5, 2, ("seq_cls",))
        with pytest.raises(DataError, match=r"X:M.*seq_pos"):
            project_and_fuse(bw, bm, proj)


def head1_oracle(a_w, a_m, p):
    flat = np.outer(a_m, a_w).ravel()
    return float((p.out.weight @ (p.mix.weight @ flat + p.mix.bias) + p.out.bias)[0])


def head2_oracle(cls_w, cls_m, a_w, a_m, p):
    def ln(x, g, b):
        return g * (x - x.mean()) / np.sqrt(x.var() + p.eps) + b

    feat = np.concatenate([
        ln(cls_w - cls_m, p.ln_cls.gamma, p.ln_cls.beta),
        ln(a_w - a_m, p.ln_pos.gamma, p.ln_pos.beta),
    ])
    return float((p.out.weight @ feat + p.out.bias)[0])


class TestHead1:
    def test_zero_input_isolates_bias_chain(self):
        rng = np.random.default_rng(3)
        p = HeadParams.create(HeadKind.HEAD1_OUTER, 4, rng)
        p.mix.bias[:] = rng.normal(size=4)
        p.out.bias[:] = rng.normal(size=1)
        expected = float((p.out.weight @ p.mix.bias + p.out.bias)[0])
        got = head1_predict(np.zeros(4), rng.normal(size=4), p)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_hand_matrix_case(self):
        p = HeadParams(HeadKind.HEAD1_OUTER,
                       out=LinearParams(np.ones((1, 2)), np.zeros(1)),
                       mix=LinearParams(np.ones((2, 4)), np.zeros(2)))
        # outer(a_m, a_w) = [[0,0],[1,0]] -> flat [0,0,1,0] -> mix [1,1] -> 2
        assert head1_predict([1.0, 0.0], [0.0, 1.0], p) == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(10 + seed)
        p = HeadParams.create(HeadKind.HEAD1_OUTER, 6, rng)
        a_w, a_m = rng.normal(size=6), rng.normal(size=6)
        assert head1_predict(a_w, a_m, p) == pytest.approx(
            head1_oracle(a_w, a_m, p), rel=1e-12)

    def test_shape_law(self):
        p = HeadParams.create(HeadKind.HEAD1_OUTER, 4, np.random.default_rng(0))
        assert p.mix.weight.shape == (4, 16)
        assert p.out.weight.shape == (1, 4)

    def test_intermediate_shapes_on_tape(self):
        # the fused outer product has d^2 entries, the mixed vector d
        from meltshift.heads import head1_forward
        from meltshift.tape import Tape
        rng = np.random.default_rng(1)
        p = HeadParams.create(HeadKind.HEAD1_OUTER, 5, rng)
        t = Tape()
        head1_forward(t, t.leaf(rng.normal(size=5)), t.leaf(rng.normal(size=5)), p)
        op_shapes = [out.value.shape for out, _, _ in t._records]
        assert op_shapes == [(25,), (5,), (1,)]


class TestHead2:
    def test_self_mutation_collapses_to_beta_channel(self):
        rng = np.random.default_rng(4)
        p = HeadParams.create(HeadKind.HEAD2_LNDIFF, 5, rng, width_cls=5)
        p.ln_cls.beta[:] = rng.normal(size=5)
        p.ln_pos.beta[:] = rng.normal(size=5)
        v = rng.normal(size=5)
        c = rng.normal(size=5)
        expected = float((p.out.weight @ np.concatenate([p.ln_cls.beta,
                                                         p.ln_pos.beta])
                          + p.out.bias)[0])
        assert head2_predict(c, c, v, v, p) == pytest.approx(expected, rel=1e-12)

    def test_self_mutation_zero_differences(self):
        rng = np.random.default_rng(5)
        p = HeadParams.create(HeadKind.HEAD2_LNDIFF, 5, rng, width_cls=5)
        v, c = rng.normal(size=5), rng.normal(size=5)
        dcls, dpos, _ = head2_features(c, c, v, v, p)
        assert np.array_equal(dcls, np.zeros(5))
        assert np.array_equal(dpos, np.zeros(5))

    def test_swap_antisymmetry_of_core(self):
        rng = np.random.default_rng(6)
        p = HeadParams.create(HeadKind.HEAD2_LNDIFF, 6, rng, width_cls=6)
        cw, cm = rng.normal(size=6), rng.normal(size=6)
        aw, am = rng.normal(size=6), rng.normal(size=6)
        _, _, feat = head2_features(cw, cm, aw, am, p)
        _, _, feat_swapped = head2_features(cm, cw, am, aw, p)
        assert np.allclose(feat_swapped, -feat, atol=1e-9)
        # prediction offset flips around the output bias
        y = head2_predict(cw, cm, aw, am, p)
        y_swapped = head2_predict(cm, cw, am, aw, p)
        b = float(p.out.bias[0])
        assert (y_swapped - b) == pytest.approx(-(y - b), rel=1e-9)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_straight_line_oracle(self, seed):
        rng = np.random.default_rng(20 + seed)
        p = HeadParams.create(HeadKind.HEAD2_LNDIFF, 8, rng, width_cls=8)
        p.ln_cls.gamma[:] = rng.normal(size=8)
        p.ln_pos.beta[:] = rng.normal(size=8)
        cw, cm = rng.normal(size=8), rng.normal(size=8)
        aw, am = rng.normal(size=8), rng.normal(size=8)
        assert head2_predict(cw, cm, aw, am, p) == pytest.approx(
            head2_oracle(cw, cm, aw, am, p), rel=1e-12)


class TestAblationHeads:
    def test_mut_concat_zero_inputs_gives_bias(self):
        rng = np.random.default_rng(7)
        p = HeadParams.create(HeadKind.MUT_CONCAT, 4, rng)
        p.out.bias[:] = [2.5]
        got = ablation_head_predict(HeadKind.MUT_CONCAT,
                                    (np.zeros(4), np.zeros(4)), p)
        assert got == pytest.approx(2.5)

    def test_lincomb_difference_collapse(self):
        rng = np.random.default_rng(8)
        p = HeadParams.create(HeadKind.MUT_LINCOMB, 4, rng)
        p.alpha[:] = [1.0]
        p.beta[:] = [-1.0]
        p.out.bias[:] = [1.25]
        v = rng.normal(size=4)
        got = ablation_head_predict(HeadKind.MUT_LINCOMB, (v, v), p)
        assert got == pytest.approx(1.25)

    def test_lincomb_matches_formula(self):
        rng = np.random.default_rng(9)
        p = HeadParams.create(HeadKind.CLS_LINCOMB, 5, rng)
        p.alpha[:] = [0.7]
        p.beta[:] = [0.2]
        xw, xm = rng.normal(size=5), rng.normal(size=5)
        expected = float((p.out.weight @ (0.7 * xw + 0.2 * xm) + p.out.bias)[0])
        got = ablation_head_predict(HeadKind.CLS_LINCOMB, (xw, xm), p)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_kind_mismatch_rejected(self):
        p = HeadParams.create(HeadKind.MUT_CONCAT, 4, np.random.default_rng(0))
        with pytest.raises(ConfigError):
            ablation_head_predict(HeadKind.MUT_LINCOMB, (np.zeros(4),) * 2, p)


class TestEnsemble:
    def test_prediction_is_exact_mean(self):
        model = build_ensemble(d_raw=10, d_proj=4, seed=0)
        for seed in range(5):
            bw = random_bundle("X:WT", 10, 2 * seed)
            bm = random_bundle("X:M", 10, 2 * seed + 1)
            y1, y2, y_ens = ensemble_predict(bw, bm, model)
            assert abs(y_ens - 0.5 * (y1 + y2)) < 1e-12

    def test_self_mutation_collapse_through_model(self):
        model = build_ensemble(d_raw=10, d_proj=4, seed=0)
        b = random_bundle("X:WT", 10, 3)
        cls_w, cls_m, a_w, a_m = project_and_fuse(b, b, model.projection)
        dcls, dpos, _ = head2_features(cls_w, cls_m, a_w, a_m, model.head2)
        assert np.array_equal(dcls, np.zeros(4))
        assert np.array_equal(dpos, np.zeros(4))

    def test_same_seed_same_params(self):
        a = build_ensemble(d_raw=10, d_proj=4, seed=42)
        b = build_ensemble(d_raw=10, d_proj=4, seed=42)
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            assert np.array_equal(pa, pb)

    def test_param_counts_differ_by_kind(self):
        counts = {}
        for kind in HeadKind:
            model = build_single_head(kind, d_raw=10, d_proj=8, seed=0)
            counts[kind] = model.param_count()
            assert counts[kind] > 0
        # the outer-product head dwarfs the concatenation head
        assert counts[HeadKind.HEAD1_OUTER] > 4 * counts[HeadKind.MUT_CONCAT]

    def test_batch_loss_components(self):
        model = build_ensemble(d_raw=10, d_proj=4, seed=1)
        samples = [(random_bundle("A:WT", 10, 1), random_bundle("A:M", 10, 2), 1.0),
                   (random_bundle("B:WT", 10, 3), random_bundle("B:M", 10, 4), -2.0)]
        from meltshift.tape import Tape
        total, parts = model.batch_loss(Tape(), samples)
        assert parts["total"] == pytest.approx(
            parts["head1"] + parts["head2"] + parts["ensemble"], abs=1e-12)
        assert total.value[0] == pytest.approx(parts["total"])


@pytest.mark.parametrize("kind", list(HeadKind))
def test_single_head_gradients_match_finite_differences(kind):
    for seed in range(2):
        model = build_single_head(kind, d_raw=7, d_proj=4, seed=seed,
                                  modalities=("seq",))
        rng = np.random.default_rng(100 + seed)
        samples = [
            (random_bundle(f"S{i}:WT", 7, 1000 + 10 * seed + i),
             random_bundle(f"S{i}:M", 7, 2000 + 10 * seed + i),
             float(rng.normal()))
            for i in range(2)
        ]
        result = check_model(model, samples)
        assert result.ok(), (kind, seed, result)


def test_ensemble_gradients_match_finite_differences_multimodal():
    model = build_ensemble(d_raw=6, d_proj=4, seed=3,
                           modalities=("struct", "seq"))
    rng = np.random.default_rng(11)
    samples = [(random_bundle(f"S{i}:WT", 6, 300 + i),
                random_bundle(f"S{i}:M", 6, 400 + i),
                float(rng.normal())) for i in range(2)]
    result = check_model(model, samples)
    assert result.ok(), result


def test_build_model_by_name():
    assert build_model("ensemble", 8, 4, 0).kind_name == "ensemble"
    assert build_model("mut_concat", 8, 4, 0).kind_name == "mut_concat"
    with pytest.raises(ValueError):
        build_model("bogus", 8, 4, 0)
