import numpy as np
import pytest
import torch

from spikingssm.lif import NeuronParams, leak_targets, lif_run
from spikingssm.sdn import sdn_init
from spikingssm.sdn_training import SdnDataset, eval_sdn, generalization_sweep, generate_dataset, oracle_targets, train_sdn


@pytest.fixture(scope="module")
def small():
    return generate_dataset(64, 128, NeuronParams(), (0.0, 1.0), seed=4)


class OracleReplay(torch.nn.Module):
    """Looks up the exact leak targets for known inputs."""

    def __init__(self, dataset):
        super().__init__()
        self.dataset = dataset
        self.pos = 0
        self.dummy = torch.nn.Parameter(torch.zeros(1))

    def forward(self, x):
        out = torch.from_numpy(self.dataset.targets[self.pos : self.pos + x.shape[0]]).to(x.dtype)
        self.pos += x.shape[0]
        return out


class TestDataset:
    def test_first_target_zero(self, small):
        assert not small.targets[:, 0].any()

    def test_hand_example(self):
        spikes, targets = oracle_targets(np.array([[2.0, 0.5, 0.1]], dtype=np.float32), 0.2)
        np.testing.assert_array_equal(spikes[0], [1, 0, 0])
        np.testing.assert_allclose(targets[0], [0.0, 0.0, 0.1], atol=1e-7)

    def test_regeneration_bit_identical(self, small):
        again = generate_dataset(64, 128, NeuronParams(), (0.0, 1.0), seed=4)
        assert np.array_equal(small.inputs, again.inputs)
        assert np.array_equal(small.targets, again.targets)

    def test_oracle_consistency(self, small):
        s, tr = lif_run(small.inputs.astype(np.float64))
        np.testing.assert_array_equal(leak_targets(tr.post_reset, 0.2).astype(np.float32), small.targets)
        assert np.array_equal(s.astype(np.uint8), small.oracle_spikes())

    def test_threshold_scaling_of_inputs(self):
        d = generate_dataset(4, 32, NeuronParams(v_th=2.0), seed=1)
        ref = generate_dataset(4, 32, NeuronParams(v_th=1.0), seed=1)
        np.testing.assert_allclose(d.inputs * 2.0, ref.inputs, rtol=1e-6)
        assert d.meta["v_th"] == 2.0 and d.meta["seed"] == 1

    @pytest.mark.parametrize("kwargs", [dict(count=0), dict(length=0), dict(params=NeuronParams(reset_mode="soft"))])
    def test_rejects(self, kwargs):
        args = dict(count=2, length=8, params=NeuronParams())
        args.update(kwargs)
        with pytest.raises(ValueError):
            generate_dataset(args["count"], args["length"], args["params"])


class TestEval:
    def test_oracle_replay_is_perfect(self, small):
        m = eval_sdn(OracleReplay(small), small, batch_size=16)
        assert m["spike_accuracy"] == 1.0 and m["mse"] == 0.0

    def test_shape_mismatch(self, small):
        with pytest.raises(ValueError):
            eval_sdn(lambda x: x[:, :-1], small)


class TestTraining:
    def test_deterministic(self, small):
        a, ra = train_sdn(small, epochs=2, batch_size=16, seed=3)
        b, rb = train_sdn(small, epochs=2, batch_size=16, seed=3)
        for p, q in zip(a.parameters(), b.parameters()):
            assert torch.equal(p, q)
        assert ra.epochs == rb.epochs

    def test_loss_trends_down(self):
        data = generate_dataset(256, 256, seed=9)
        _, report = train_sdn(data, epochs=6, batch_size=32, seed=0)
        losses = [r["train_mse"] for r in report.epochs]
        assert losses[-1] < 0.5 * losses[0]
        assert report.config["optimizer"] == "AdamW"

    def test_non_finite_loss(self, small):
        bad = SdnDataset(small.inputs.copy(), small.targets.copy(), dict(small.meta))
        bad.inputs[0, 5] = np.nan
        with pytest.raises(FloatingPointError):
            train_sdn(bad, epochs=1, batch_size=64)

    def test_reports_test_metrics(self, small):
        _, report = train_sdn(small, epochs=1, batch_size=32, test=small)
        assert {"train_mse", "test_mse", "test_spike_accuracy"} <= set(report.epochs[0])


class TestSweep:
    def test_axes(self):
        model = sdn_init(0).eval()
        rows = generalization_sweep(model, "length", [16, 32], total_steps=4096)
        assert [r["value"] for r in rows] == [16, 32]
        rows = generalization_sweep(model, "distribution", [(-1.0, 1.0)], total_steps=4096)
        assert 0.0 <= rows[0]["accuracy"] <= 1.0
        rows = generalization_sweep(model, "tau", [0.2, 0.5], total_steps=4096)
        assert len(rows) == 2
        assert not any(p.requires_grad for p in model.parameters())

    def test_rejects(self):
        with pytest.raises(ValueError):
            generalization_sweep(sdn_init(0), "width", [1])
        with pytest.raises(ValueError):
            generalization_sweep(sdn_init(0), "tau", [1.5], total_steps=64)
