"""Dataset-scale checks: ground-truth sanity, the learning signal and the ablation direction."""

import statistics

import pytest

from latentplan.ablation import run_ablation
from latentplan.bev import GridConfig
from latentplan.kernels import AttentionConfig
from latentplan.losses import LossWeights
from latentplan.metrics import evaluate, evaluate_baseline
from latentplan.model import ModelConfig, Variant, build_model, derive_seed
from latentplan.prior import GenerationConfig
from latentplan.scenes import MotionKind, SceneGenConfig, generate_scenes
from latentplan.training import TrainConfig, fit

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
TRAIN_CFG = TrainConfig(epochs=40, accumulation=8, lr=1e-3)


def scene_set(count: int, offset: int = 0):
    return generate_scenes(SceneGenConfig(), [derive_seed(0, offset + i) for i in range(count)])


def desk_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(
        attention=AttentionConfig(model_dim=64),
        grid=GridConfig(),
        generation=GenerationConfig(latent_dim=128, gru_hidden=128),
        init_seed=seed,
    )


@pytest.fixture(scope="module")
def train_scenes():
    return scene_set(512)


@pytest.fixture(scope="module")
def held_out():
    return scene_set(64, offset=512)


@pytest.fixture(scope="module")
def curved_held_out():
    scenes = [s for s in scene_set(256, offset=1024) if s.ego.motion_kind != MotionKind.STRAIGHT]
    assert len(scenes) >= 32
    return scenes


@pytest.fixture(scope="module")
def trained_full(train_scenes):
    """The full model trained once per seed."""
    return {
        seed: fit(
            train_scenes,
            desk_model_config(seed),
            TRAIN_CFG.model_copy(update={"seed": seed}),
            LossWeights(),
        ).model
        for seed in SEEDS
    }


class TestGroundTruthSanity:
    """Ground-truth plans over a large generated set."""

    def test_ground_truth_is_exact_and_clear(self) -> None:
        """Test zero L2 and zero collisions for GT plans over 256 scenes."""
        report = evaluate_baseline("gt", scene_set(256), "at_timestep")
        assert set(report.plan.l2_at.values()) == {0.0}
        assert set(report.plan.collision_at.values()) == {0.0}


class TestLearningSignal:
    """Training on synthetic scenes must beat the untrained planner and extrapolation."""

    def test_training_halves_l2(self, trained_full, held_out) -> None:
        """Test that held-out 3 s L2 drops below half the untrained value (median of 3 seeds)."""
        ratios = []
        for seed, model in trained_full.items():
            before = evaluate(build_model(desk_model_config(seed)), held_out).plan.l2_at["3s"]
            after = evaluate(model, held_out).plan.l2_at["3s"]
            ratios.append(after / before)
        assert statistics.median(ratios) < 0.5

    def test_beats_constant_velocity_on_curved_scenes(self, trained_full, curved_held_out) -> None:
        """Test 3 s L2 below constant-velocity extrapolation on arc and lane-change scenes."""
        baseline = evaluate_baseline("constant_velocity", curved_held_out, "at_timestep")
        model_l2 = [
            evaluate(model, curved_held_out).plan.l2_at["3s"] for model in trained_full.values()
        ]
        assert statistics.median(model_l2) < baseline.plan.l2_at["3s"]


class TestAblationDirection:
    """The full model against the variant without prior and rollout."""

    def test_full_beats_neither(self, train_scenes, held_out) -> None:
        """Test lower median held-out average L2 for the full model over 3 seeds."""
        rows = run_ablation(
            train_scenes,
            held_out,
            [Variant.FULL, Variant.NEITHER],
            desk_model_config(),
            TRAIN_CFG,
            LossWeights(),
            seeds=SEEDS,
        )
        assert len(rows) == 2 * len(SEEDS)
        full = statistics.median(r.l2_avg for r in rows if r.variant == Variant.FULL)
        neither = statistics.median(r.l2_avg for r in rows if r.variant == Variant.NEITHER)
        assert full < neither
