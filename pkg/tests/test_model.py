import numpy as np
import pytest
import torch

from fdcheck import max_relative_error
from oracles import transformer_layer_forward
from punctuator.errors import BadSelectionError, IdOutOfRangeError, ShapeMismatchError
from punctuator.model import (
    Encoder,
    ModelConfig,
    PRESET_SHAPES,
    count_parameters,
    init_student_from_teacher,
    load_checkpoint,
    parameter_count,
    pmp_logits,
    preset_config,
    save_checkpoint,
    uniform_layer_selection,
)
from punctuator.pretrain import ce_loss, pmp_loss, scl_loss


def tiny_config(**overrides) -> ModelConfig:
    base = dict(layers=2, hidden=8, ffn=16, heads=2, vocab_size=13, max_len=10, num_marks=4)
    base.update(overrides)
    return ModelConfig(**base)


class TestModelConfig:
    def test_heads_must_divide_hidden(self):
        with pytest.raises(ValueError):
            tiny_config(hidden=10, heads=3)

    def test_published_preset_shapes(self):
        assert PRESET_SHAPES["teacher"] == (12, 768, 3072, 12)
        assert PRESET_SHAPES["h768"] == (6, 768, 3072, 12)
        assert PRESET_SHAPES["h256"] == (6, 256, 1024, 8)
        assert PRESET_SHAPES["h312"] == (4, 312, 1200, 12)
        assert PRESET_SHAPES["teacher-desk"] == (4, 64, 256, 4)
        assert PRESET_SHAPES["student-desk"] == (2, 32, 128, 2)

    def test_round_trip_dict(self):
        cfg = tiny_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestParameterCounts:
    def test_analytic_matches_allocation(self):
        cfg = tiny_config()
        assert count_parameters(Encoder(cfg, seed=0)) == parameter_count(cfg)
        cfg2 = tiny_config(layers=3, hidden=12, ffn=20, heads=4, vocab_size=50)
        assert count_parameters(Encoder(cfg2, seed=0)) == parameter_count(cfg2)

    @pytest.mark.parametrize(
        "preset,expected_pct",
        [("h256", 10.1), ("h312", 11.2), ("h768", 58.4)],
    )
    def test_published_size_ratios(self, preset, expected_pct):
        teacher = parameter_count(preset_config("teacher"))
        student = parameter_count(preset_config(preset))
        got_pct = 100.0 * student / teacher
        assert abs(got_pct - expected_pct) / expected_pct < 0.02


class TestEmbed:
    def test_shape_contract(self):
        cfg = tiny_config(hidden=16, heads=2, max_len=12)
        enc = Encoder(cfg, seed=0)
        ids = torch.zeros((2, 8), dtype=torch.long)
        assert enc.embed(ids).shape == (2, 8, 16)

    def test_zero_tables_give_zero(self):
        enc = Encoder(tiny_config(), seed=0)
        with torch.no_grad():
            enc.token_embedding.weight.zero_()
            enc.position_embedding.weight.zero_()
        out = enc.embed(torch.tensor([[1, 2, 3]]))
        assert torch.equal(out, torch.zeros_like(out))

    def test_hand_set_tables(self):
        # frozen expectation: row sums of hand-set token and position tables
        cfg = ModelConfig(0, 2, 4, 1, vocab_size=3, max_len=2, num_marks=2)
        enc = Encoder(cfg, seed=0).double()
        with torch.no_grad():
            enc.token_embedding.weight.copy_(
                torch.tensor([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6]], dtype=torch.float64)
            )
            enc.position_embedding.weight.copy_(
                torch.tensor([[0.01, 0.02], [0.03, -0.04]], dtype=torch.float64)
            )
        out = enc.embed(torch.tensor([[2, 0]]))
        expected = torch.tensor(
            [[[-0.49, 0.62], [0.13, -0.24000000000000002]]], dtype=torch.float64
        )
        assert torch.allclose(out, expected, atol=1e-15)

    def test_id_out_of_range(self):
        enc = Encoder(tiny_config(), seed=0)
        with pytest.raises(IdOutOfRangeError):
            enc.embed(torch.tensor([[99]]))

    def test_too_long(self):
        enc = Encoder(tiny_config(max_len=4), seed=0)
        with pytest.raises(ShapeMismatchError):
            enc.embed(torch.zeros((1, 5), dtype=torch.long))


class TestEncode:
    def test_zero_layers_identity(self):
        enc = Encoder(tiny_config(layers=0), seed=0)
        x = torch.randn(2, 5, 8)
        assert torch.equal(enc.encode(x), x)

    @pytest.mark.parametrize("layers", [1, 3])
    def test_shape_preserved(self, layers):
        enc = Encoder(tiny_config(layers=layers), seed=0)
        x = torch.randn(2, 6, 8)
        assert enc.encode(x).shape == x.shape

    @pytest.mark.parametrize("heads", [1, 2])
    def test_matches_attention_oracle(self, heads):
        torch.manual_seed(3)
        cfg = tiny_config(layers=1, hidden=4, ffn=6, heads=heads, max_len=8)
        enc = Encoder(cfg, seed=1).double()
        layer = enc.layers[0]
        with torch.no_grad():  # hand-set, reproducible weights
            for mod in (layer.q, layer.k, layer.v, layer.o, layer.ffn_in, layer.ffn_out):
                mod.weight.copy_(torch.randn_like(mod.weight) * 0.5)
                mod.bias.copy_(torch.randn_like(mod.bias) * 0.1)
        x = torch.randn(1, 2, 4, dtype=torch.float64)
        with torch.no_grad():
            ours = enc.encode(x.clone())[0].numpy()
        weights = {k: v.detach().numpy() for k, v in layer.state_dict().items()}
        reference = transformer_layer_forward(x[0].numpy(), weights, heads)
        np.testing.assert_allclose(ours, reference, rtol=1e-10, atol=1e-12)

    def test_padding_masked_out(self):
        cfg = tiny_config(max_len=10)
        enc = Encoder(cfg, seed=2).double()
        ids_short = torch.tensor([[5, 6, 7]])
        ids_padded = torch.tensor([[5, 6, 7, 0, 0, 0]])
        mask = torch.tensor([[True, True, True, False, False, False]])
        out_short = enc(ids_short, torch.ones((1, 3), dtype=torch.bool))
        out_padded = enc(ids_padded, mask)
        assert torch.allclose(out_short, out_padded[:, :3], atol=1e-10)

    def test_batch_permutation_consistency(self):
        enc = Encoder(tiny_config(), seed=4)
        ids = torch.randint(0, 13, (4, 6))
        mask = torch.ones((4, 6), dtype=torch.bool)
        out = enc(ids, mask)
        perm = torch.tensor([2, 0, 3, 1])
        out_perm = enc(ids[perm], mask[perm])
        assert torch.allclose(out[perm], out_perm, atol=1e-6)


class TestPmpLogits:
    def test_zero_head_uniform(self):
        head = torch.nn.Linear(8, 4)
        with torch.no_grad():
            head.weight.zero_()
            head.bias.zero_()
        out = pmp_logits(torch.randn(3, 8), head)
        assert torch.equal(out, torch.zeros(3, 4))

    def test_shape(self):
        head = torch.nn.Linear(8, 4)
        assert pmp_logits(torch.randn(3, 8), head).shape == (3, 4)

    def test_hand_affine(self):
        head = torch.nn.Linear(2, 2).double()
        with torch.no_grad():
            head.weight.copy_(torch.tensor([[1.0, -1.0], [0.5, 2.0]], dtype=torch.float64))
            head.bias.copy_(torch.tensor([0.25, -0.5], dtype=torch.float64))
        out = pmp_logits(torch.tensor([[2.0, 3.0]], dtype=torch.float64), head)
        # rows of W dot the representation, plus bias: [2-3+0.25, 1+6-0.5]
        assert torch.allclose(out, torch.tensor([[-0.75, 6.5]], dtype=torch.float64))

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            pmp_logits(torch.randn(3, 5), torch.nn.Linear(8, 4))


class TestStudentInit:
    def test_uniform_selection(self):
        assert uniform_layer_selection(12, 6) == [1, 3, 5, 7, 9, 11]
        assert uniform_layer_selection(4, 2) == [1, 3]
        assert uniform_layer_selection(4, 4) == [0, 1, 2, 3]

    def test_copies_selected_layers(self):
        t_cfg = tiny_config(layers=4)
        teacher = Encoder(t_cfg, seed=0)
        student = init_student_from_teacher(teacher, tiny_config(layers=2), [1, 3], seed=9)
        for j, t_idx in enumerate([1, 3]):
            for (_, a), (_, b) in zip(
                student.layers[j].state_dict().items(),
                teacher.layers[t_idx].state_dict().items(),
            ):
                assert torch.equal(a, b)
        assert torch.equal(teacher.token_embedding.weight, student.token_embedding.weight)
        assert torch.equal(teacher.pmp_head.weight, student.pmp_head.weight)

    def test_identity_selection_copies_everything(self):
        cfg = tiny_config(layers=3)
        teacher = Encoder(cfg, seed=0)
        student = init_student_from_teacher(teacher, cfg, [0, 1, 2], seed=9)
        for (name, a), (_, b) in zip(
            student.state_dict().items(), teacher.state_dict().items()
        ):
            assert torch.equal(a, b), name

    def test_cross_width_fresh_shapes(self):
        teacher = Encoder(tiny_config(layers=4, hidden=8, ffn=16, heads=2), seed=0)
        s_cfg = tiny_config(layers=2, hidden=4, ffn=8, heads=1)
        student = init_student_from_teacher(teacher, s_cfg, seed=9)
        assert student.config == s_cfg
        assert student.token_embedding.weight.shape == (13, 4)
        # fresh init is the seeded initialization, not a teacher copy
        fresh = Encoder(s_cfg, seed=9)
        assert torch.equal(student.token_embedding.weight, fresh.token_embedding.weight)

    def test_bad_selection(self):
        teacher = Encoder(tiny_config(layers=4), seed=0)
        with pytest.raises(BadSelectionError):
            init_student_from_teacher(teacher, tiny_config(layers=2), [1])
        with pytest.raises(BadSelectionError):
            init_student_from_teacher(teacher, tiny_config(layers=2), [1, 7])


class TestCheckpoints:
    def test_bit_exact_round_trip(self, tmp_path):
        enc = Encoder(tiny_config(), seed=11)
        save_checkpoint(
            tmp_path / "ck", enc, step=17, history=[{"step": 0, "loss": 1.0}],
            mark_names=["O", "COMMA"], vocab={"[PAD]": 0}, extra={"stage": "test"},
        )
        back, manifest = load_checkpoint(tmp_path / "ck")
        for (name, a), (_, b) in zip(back.state_dict().items(), enc.state_dict().items()):
            assert torch.equal(a, b), name
        assert manifest["step"] == 17
        assert manifest["marks"] == ["O", "COMMA"]
        assert manifest["extra"]["stage"] == "test"


class TestModelGradients:
    def test_every_parameter_matches_finite_differences(self):
        """Backprop through embed + encode + head against central differences."""
        torch.manual_seed(0)
        cfg = tiny_config(layers=2, hidden=8, ffn=12, heads=2, vocab_size=11, max_len=9)
        enc = Encoder(cfg, seed=5).double()
        ids = torch.tensor([[3, 4, 5, 6, 7, 0, 0], [8, 9, 10, 3, 4, 5, 0]])
        mask = torch.tensor([[1, 1, 1, 1, 1, 0, 0], [1, 1, 1, 1, 1, 1, 0]], dtype=torch.bool)
        b_idx = torch.tensor([0, 0, 1, 1])
        p_idx = torch.tensor([1, 3, 0, 4])
        labels = torch.tensor([0, 1, 2, 3])

        def loss_fn():
            states = enc(ids, mask)
            reps = states[b_idx, p_idx]
            logits = pmp_logits(reps, enc.pmp_head)
            return pmp_loss(ce_loss(logits, labels), scl_loss(reps, labels, 0.07), 0.1)

        params = [p for p in enc.parameters()]
        worst = max_relative_error(loss_fn, params, step=1e-5)
        assert worst < 1e-4, f"worst relative error {worst}"
