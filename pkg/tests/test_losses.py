import math

import numpy as np
import pytest
import torch

import actionseg.losses as losses
from actionseg.generative import GMDGMParams, SLDSParams
from actionseg.losses import (
    LossWeights,
    anneal_weight,
    build_r_distribution,
    classification_loss,
    elbo_labeled,
    elbo_semisupervised,
    elbo_unlabeled,
    gmdgm_elbo_labeled,
    gmdgm_elbo_unlabeled,
    gmdgm_semisupervised,
)
from actionseg.posteriors import PosteriorNets, draw_noise
from actionseg.tcn import TCNConfig

from _oracles import (
    brute_force_gmdgm_elbo,
    brute_force_labeled_elbo,
    brute_force_marginal_elbo,
    gmdgm_numpy_params,
    slds_numpy_params,
)

DT = torch.float64


def _setup(k=3, l=2, d=4, seed=0, nonlinear=False):
    torch.manual_seed(seed)
    nets = PosteriorNets(TCNConfig(input_dim=d, n_filters=8), k, l).double()
    gen = SLDSParams(k, l, d, nonlinear=nonlinear).double()
    return nets, gen


def _moments_and_samples(nets, x, seed):
    with torch.no_grad():
        mu, var = nets.encode_all(torch.as_tensor(x, dtype=DT))
    eps = draw_noise(mu.shape[0], mu.shape[1], mu.shape[2], seed)
    return mu, var, mu + torch.sqrt(var) * eps


def _random_simplex(t, k, seed):
    rng = np.random.default_rng(seed)
    r = rng.random((t, k)) + 0.05
    return torch.as_tensor(r / r.sum(axis=1, keepdims=True), dtype=DT)


class TestRDistribution:
    def test_all_labeled_one_hot(self):
        q = _random_simplex(4, 3, 0)
        r = build_r_distribution(q, torch.tensor([0, 2, 1, 0]))
        expected = torch.eye(3, dtype=DT)[[0, 2, 1, 0]]
        assert torch.equal(r.probs, expected)
        assert r.is_labeled.all()

    def test_all_unlabeled_passthrough(self):
        q = _random_simplex(4, 3, 1)
        r = build_r_distribution(q, torch.full((4,), -1))
        assert torch.equal(r.probs, q)
        assert not r.is_labeled.any()

    def test_mixed(self):
        q = _random_simplex(3, 2, 2)
        r = build_r_distribution(q, torch.tensor([-1, 1, -1]))
        assert torch.equal(r.probs[0], q[0]) and torch.equal(r.probs[2], q[2])
        assert r.probs[1].tolist() == [0.0, 1.0]


class TestAnneal:
    def test_ramp(self):
        assert anneal_weight(0) == 0.0
        assert anneal_weight(50) == 0.5
        assert anneal_weight(100) == 1.0
        assert anneal_weight(500) == 1.0

    def test_custom_horizon(self):
        assert anneal_weight(5, anneal_epochs=10) == 0.5

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            anneal_weight(-1)


class TestClassificationLoss:
    def test_perfect_predictions_zero(self):
        probs = torch.eye(3, dtype=DT)[[0, 1, 2, 1]]
        loss, any_labeled = classification_loss(probs, [0, 1, 2, 1], torch.ones(3, dtype=DT))
        assert any_labeled and abs(float(loss)) < 1e-12

    def test_uniform_predictions(self):
        probs = torch.full((10, 5), 0.2, dtype=DT)
        loss, _ = classification_loss(probs, [0] * 10, torch.ones(5, dtype=DT))
        assert abs(float(loss) - math.log(5)) < 1e-12

    def test_weighted_hand_value(self):
        # two frames, classes 0 and 1, weights (2, 1):
        # loss = (2*(-log .5) + 1*(-log .25)) / 3
        probs = torch.tensor([[0.5, 0.5], [0.75, 0.25]], dtype=DT)
        loss, _ = classification_loss(probs, [0, 1], torch.tensor([2.0, 1.0], dtype=DT))
        expected = (2 * math.log(2) + math.log(4)) / 3
        assert abs(float(loss) - expected) < 1e-12

    def test_unlabeled_frames_ignored(self):
        probs = _random_simplex(6, 3, 3)
        full, _ = classification_loss(probs[:3], [0, 1, 2], torch.ones(3, dtype=DT))
        padded, _ = classification_loss(probs, [0, 1, 2, -1, -1, -1], torch.ones(3, dtype=DT))
        assert torch.allclose(full, padded)

    def test_nothing_labeled(self):
        loss, any_labeled = classification_loss(_random_simplex(4, 2, 4), [-1] * 4, torch.ones(2, dtype=DT))
        assert not any_labeled and float(loss) == 0.0


class TestLabeledElbo:
    def test_matches_brute_force_oracle(self):
        nets, gen = _setup(k=3, l=2, d=4)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 4))
        y = np.array([0, 0, 2, 1, 1, 0])
        elbo = elbo_labeled(x, y, nets, gen, seed=42)
        mu, var, z = _moments_and_samples(nets, x, seed=42)
        idx = torch.as_tensor(y).view(-1, 1, 1).expand(-1, 1, 2)
        oracle = brute_force_labeled_elbo(
            x, y,
            mu.gather(1, idx).squeeze(1).numpy(),
            var.gather(1, idx).squeeze(1).numpy(),
            z.gather(1, idx).squeeze(1).numpy(),
            slds_numpy_params(gen),
        )
        assert abs(float(elbo) - oracle) < 1e-8

    def test_single_frame_formula(self):
        nets, gen = _setup(k=2, l=1, d=2, seed=1)
        x = np.array([[0.5, -1.0]])
        elbo = elbo_labeled(x, [1], nets, gen, seed=0)
        mu, var, z = _moments_and_samples(nets, x, seed=0)
        from actionseg.generative import gaussian_kl, gaussian_logpdf

        expected = (
            float(gaussian_logpdf(torch.as_tensor(x[0], dtype=DT), gen.decode(z[0, 1]), gen.S))
            - float(gaussian_kl(mu[0, 1], var[0, 1], torch.zeros(1, dtype=DT), torch.ones(1, dtype=DT)))
            + math.log(0.5)
        )
        assert abs(float(elbo) - expected) < 1e-10

    def test_rejects_unlabeled_frames(self):
        nets, gen = _setup()
        with pytest.raises(ValueError):
            elbo_labeled(np.zeros((3, 4)), [0, -1, 1], nets, gen, seed=0)

    def test_decreases_with_emission_residual(self):
        # scaling the observations away from the decodable range lowers the bound
        nets, gen = _setup(seed=2)
        x = np.random.default_rng(1).normal(size=(10, 4))
        y = np.zeros(10, dtype=int)
        a = float(elbo_labeled(x, y, nets, gen, seed=0))
        b = float(elbo_labeled(x * 50, y, nets, gen, seed=0))
        assert b < a


class TestMarginalElbo:
    def test_matches_brute_force_oracle(self):
        nets, gen = _setup(k=3, l=2, d=4, seed=3)
        x = np.random.default_rng(2).normal(size=(5, 4))
        r = _random_simplex(5, 3, 5)
        elbo = elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=9, probs=r)
        mu, var, z = _moments_and_samples(nets, x, seed=9)
        oracle = brute_force_marginal_elbo(x, r, mu, var, z, slds_numpy_params(gen))
        assert abs(float(elbo) - oracle) < 1e-8

    def test_minimal_case_oracle(self):
        # smallest nontrivial configuration: two frames, two states, scalar latent
        nets, gen = _setup(k=2, l=1, d=2, seed=4)
        x = np.array([[0.3, -0.8], [1.1, 0.2]])
        r = torch.tensor([[0.7, 0.3], [0.4, 0.6]], dtype=DT)
        elbo = elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=1, probs=r)
        mu, var, z = _moments_and_samples(nets, x, seed=1)
        oracle = brute_force_marginal_elbo(x, r, mu, var, z, slds_numpy_params(gen))
        assert abs(float(elbo) - oracle) < 1e-8

    def test_one_hot_reduces_to_labeled(self):
        nets, gen = _setup(seed=5)
        x = np.random.default_rng(3).normal(size=(20, 4))
        y = np.random.default_rng(4).integers(0, 3, size=20)
        one_hot = torch.eye(3, dtype=DT)[y]
        unl = elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=11, probs=one_hot)
        lab = elbo_labeled(x, y, nets, gen, seed=11)
        assert abs(float(unl) - float(lab)) < 1e-10

    def test_classifier_probs_used_by_default(self):
        nets, gen = _setup(seed=6)
        x = torch.as_tensor(np.random.default_rng(5).normal(size=(8, 4)), dtype=DT)
        from actionseg.posteriors import classify

        explicit = elbo_unlabeled(x, nets, gen, seed=2, probs=classify(nets, x))
        default = elbo_unlabeled(x, nets, gen, seed=2)
        assert abs(float(explicit) - float(default)) < 1e-12

    def test_seed_determinism(self):
        nets, gen = _setup(seed=7)
        x = torch.as_tensor(np.random.default_rng(6).normal(size=(12, 4)), dtype=DT)
        assert float(elbo_unlabeled(x, nets, gen, seed=3)) == float(elbo_unlabeled(x, nets, gen, seed=3))
        assert float(elbo_unlabeled(x, nets, gen, seed=3)) != float(elbo_unlabeled(x, nets, gen, seed=4))

    def test_dynamics_kl_cost_quadratic_in_states(self):
        # count scalar KL evaluations inside the marginalized bound
        counts = {}
        real_kl = losses.gaussian_kl

        def run(k):
            nets, gen = _setup(k=k, l=1, d=2, seed=8)
            x = torch.as_tensor(np.random.default_rng(7).normal(size=(21, 2)), dtype=DT)
            tally = [0]

            def counting_kl(mq, vq, mp, vp):
                out = real_kl(mq, vq, mp, vp)
                tally[0] += out.numel()
                return out

            losses.gaussian_kl = counting_kl
            try:
                elbo_unlabeled(x, nets, gen, seed=0, probs=_random_simplex(21, k, 1))
            finally:
                losses.gaussian_kl = real_kl
            return tally[0]

        for k in (2, 4):
            counts[k] = run(k)
        # per frame pair the double sum contributes K^2 terms
        assert counts[4] - 4 == 4 * (counts[2] - 2)


class TestSemisupervised:
    def test_all_labeled_identity(self):
        nets, gen = _setup(seed=9)
        x = np.random.default_rng(8).normal(size=(15, 4))
        y = np.random.default_rng(9).integers(0, 3, size=15)
        w = torch.tensor([1.0, 0.5, 1.5], dtype=DT)
        weights = LossWeights(alpha=10.0, kl_anneal=1.0, class_weights=w)
        semi = elbo_semisupervised(torch.as_tensor(x, dtype=DT), y, nets, gen, weights, seed=5)
        from actionseg.posteriors import classify

        q = classify(nets, x)
        logq = torch.log(q[torch.arange(15), torch.as_tensor(y)])
        expected = float(elbo_labeled(x, y, nets, gen, seed=5)) + 10.0 * float((w[y] * logq).sum())
        assert abs(float(semi) - expected) < 1e-9

    def test_no_labels_identity(self):
        nets, gen = _setup(seed=10)
        x = torch.as_tensor(np.random.default_rng(10).normal(size=(15, 4)), dtype=DT)
        weights = LossWeights(alpha=100.0, kl_anneal=1.0)
        semi = elbo_semisupervised(x, [-1] * 15, nets, gen, weights, seed=6)
        unl = elbo_unlabeled(x, nets, gen, seed=6)
        assert float(semi) == float(unl)

    def test_anneal_zero_leaves_only_reconstruction(self):
        nets, gen = _setup(seed=11)
        x = torch.as_tensor(np.random.default_rng(11).normal(size=(10, 4)), dtype=DT)
        labels = [0, -1, 1, -1, 2, -1, -1, 0, -1, 1]
        weights = LossWeights(alpha=3.0, kl_anneal=0.0)
        elbo, parts = elbo_semisupervised(
            x, labels, nets, gen, weights, seed=7, return_parts=True
        )
        assert abs(float(elbo) - parts["recon"] - parts["classification"]) < 1e-9

    def test_anneal_interpolates_linearly(self):
        nets, gen = _setup(seed=12)
        x = torch.as_tensor(np.random.default_rng(12).normal(size=(10, 4)), dtype=DT)
        labels = [-1, 0, -1, 1, -1, -1, 2, -1, 0, -1]
        vals = []
        for a in (0.0, 0.5, 1.0):
            weights = LossWeights(alpha=1.0, kl_anneal=a)
            vals.append(float(elbo_semisupervised(x, labels, nets, gen, weights, seed=8)))
        assert abs((vals[0] + vals[2]) / 2 - vals[1]) < 1e-9

    def test_gradients_flow_to_all_parameters(self):
        nets, gen = _setup(k=2, l=1, d=2, seed=13)
        x = torch.as_tensor(np.random.default_rng(13).normal(size=(8, 2)), dtype=DT)
        weights = LossWeights(alpha=5.0, kl_anneal=0.7)
        loss = -elbo_semisupervised(x, [0, -1, 1, -1, 0, -1, 1, -1], nets, gen, weights, seed=9)
        loss.backward()
        for name, p in list(nets.named_parameters()) + list(gen.named_parameters()):
            assert p.grad is not None, name
            assert torch.isfinite(p.grad).all(), name


class TestNonlinearVariant:
    def test_marginal_runs_and_reduces(self):
        nets, gen = _setup(k=2, l=2, d=3, seed=14, nonlinear=True)
        x = np.random.default_rng(14).normal(size=(12, 3))
        y = np.random.default_rng(15).integers(0, 2, size=12)
        one_hot = torch.eye(2, dtype=DT)[y]
        unl = elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=10, probs=one_hot)
        lab = elbo_labeled(x, y, nets, gen, seed=10)
        assert abs(float(unl) - float(lab)) < 1e-10


class TestGMDGM:
    def _setup(self, k=3, l=2, d=4, seed=0):
        torch.manual_seed(seed)
        nets = PosteriorNets(TCNConfig(input_dim=d, n_filters=8), k, l, temporal=False).double()
        gen = GMDGMParams(k, l, d).double()
        return nets, gen

    def test_matches_brute_force_oracle(self):
        nets, gen = self._setup()
        x = np.random.default_rng(16).normal(size=(6, 4))
        r = _random_simplex(6, 3, 17)
        elbo = gmdgm_elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=12, probs=r)
        mu, var, z = _moments_and_samples(nets, x, seed=12)
        oracle = brute_force_gmdgm_elbo(x, r, mu, var, z, gmdgm_numpy_params(gen))
        assert abs(float(elbo) - oracle) < 1e-8

    def test_one_hot_reduction(self):
        nets, gen = self._setup(seed=1)
        x = np.random.default_rng(18).normal(size=(10, 4))
        y = np.random.default_rng(19).integers(0, 3, size=10)
        one_hot = torch.eye(3, dtype=DT)[y]
        unl = gmdgm_elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=13, probs=one_hot)
        lab = gmdgm_elbo_labeled(x, y, nets, gen, seed=13)
        assert abs(float(unl) - float(lab)) < 1e-10

    def test_unlabeled_is_mixture_plus_entropy(self):
        # L_u = sum_t [ sum_k q_tk L_l(x_t, k) + H(q_t) ], with the per-frame
        # labeled bounds recomputed directly from the posterior moments
        nets, gen = self._setup(k=2, l=1, d=2, seed=2)
        x = np.random.default_rng(20).normal(size=(4, 2))
        q = _random_simplex(4, 2, 21)
        unl = float(gmdgm_elbo_unlabeled(torch.as_tensor(x, dtype=DT), nets, gen, seed=14, probs=q))
        mu, var, z = _moments_and_samples(nets, x, seed=14)
        from actionseg.generative import gaussian_kl, gaussian_logpdf

        per_frame_lab = np.zeros((4, 2))
        for t in range(4):
            for k in range(2):
                per_frame_lab[t, k] = (
                    float(gaussian_logpdf(torch.as_tensor(x[t], dtype=DT), gen.decode(z[t, k]), gen.S))
                    + math.log(0.5)
                    - float(gaussian_kl(mu[t, k], var[t, k], gen.f[k], gen.s[k]))
                )
        qn = q.numpy()
        entropy = float(-(qn * np.log(qn)).sum())
        expected = float((qn * per_frame_lab).sum()) + entropy
        assert abs(unl - expected) < 1e-9

    def test_semisupervised_identities(self):
        nets, gen = self._setup(seed=3)
        x = torch.as_tensor(np.random.default_rng(22).normal(size=(8, 4)), dtype=DT)
        weights = LossWeights(alpha=2.0, kl_anneal=1.0)
        semi = gmdgm_semisupervised(x, [-1] * 8, nets, gen, weights, seed=15)
        unl = gmdgm_elbo_unlabeled(x, nets, gen, seed=15)
        assert float(semi) == float(unl)


class TestLossWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0)
        with pytest.raises(ValueError):
            LossWeights(kl_anneal=1.5)
