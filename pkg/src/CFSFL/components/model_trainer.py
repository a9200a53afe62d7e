from typing import Callable, Iterator, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from CFSFL import logger
from CFSFL.components.diffcore import AdamState, Tensor, adam_step, backward
from CFSFL.components.loop_engine import LoopMode, loss_adversarial, loss_collaborative, unroll
from CFSFL.components.model_bundle import ModelBundle
from CFSFL.components.recommender import SampleMode, beta_at, elbo_loss, l2_penalty, normalize_rows
from CFSFL.constants import FUSION, PHI, PSI, THETA
from CFSFL.entity.artifact_entity import LossReport, SplitSet, TrainingResult
from CFSFL.entity.config_entity import RecommenderConfig, TrainingConfig
from CFSFL.exception import DataError, NumericError, ParameterError
from CFSFL.utils.common import noise_stream

EpochCallback = Callable[[LossReport, ModelBundle], None]
StageCallback = Callable[[int, ModelBundle], None]

# noise-stream sub-keys inside (seed, stage, epoch, ...)
_EXPERT_ORDER, _POLICY_ORDER, _BATCH_NOISE = 0, 1, 2


class _Tally:
    """User-weighted running means of the per-epoch report fields."""

    def __init__(self):
        self.users = 0
        self.batches = 0
        self.sums = dict.fromkeys(
            ("loss_rec", "loss_collab", "loss_adv", "mean_reward_expert", "mean_reward_policy"), 0.0)

    def add(self, n_users: int, **values: float) -> None:
        self.users += n_users
        self.batches += 1
        for key, value in values.items():
            self.sums[key] += value * n_users

    def report(self, stage: int, epoch: int) -> LossReport:
        n = max(1, self.users)
        return LossReport(epoch=epoch, stage=stage, **{k: v / n for k, v in self.sums.items()})


class ModelTrainer:
    """Runs the three training stages over the train users of a split.

    Stage 1 fits the recommender alone, stage 2 fits the reward estimator
    against the fixed recommender, and stage 3 alternates between the two
    with the feedback loop unrolled for ``config.T`` steps.
    """

    def __init__(self, config: TrainingConfig, split: SplitSet,
                 recommender_config: Optional[RecommenderConfig] = None):
        if config.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if config.T < 0:
            raise ParameterError("T must be non-negative")
        if config.stage3_epochs > 0 and config.T < 1:
            raise ParameterError("stage 3 needs T >= 1")
        if min(config.stage1_epochs, config.stage2_epochs, config.stage3_epochs) < 0:
            raise ParameterError("epoch counts must be non-negative")
        self.config = config
        self.split = split
        self.recommender_config = recommender_config

        self.rows: List[Sequence[int]] = [r for r in split.train.rows if len(r)]
        if len(self.rows) < len(split.train.rows):
            logger.warning(f"skipping {len(split.train.rows) - len(self.rows)} train users without interactions")
        if not self.rows:
            raise DataError("no train users with interactions")

    @property
    def n_batches(self) -> int:
        return -(-len(self.rows) // self.config.batch_size)

    def _batches(self, stage: int, epoch: int, key: int) -> Iterator[List[Sequence[int]]]:
        order = noise_stream(self.config.seed, stage, epoch, key).permutation(len(self.rows))
        size = self.config.batch_size
        for start in range(0, order.size, size):
            yield [self.rows[i] for i in order[start:start + size]]

    def _adam(self, bundle: ModelBundle, owners) -> AdamState:
        c = self.config
        return AdamState.for_params(bundle.params, bundle.params.names(owners),
                                    lr=c.lr, beta1=c.beta1, beta2=c.beta2, epsilon=c.epsilon)

    def _update(self, loss: Tensor, bundle: ModelBundle, state: AdamState, stage: int, epoch: int, batch: int):
        if not np.isfinite(loss.data).all():
            raise NumericError("non-finite loss", stage=stage, epoch=epoch, batch=batch)
        try:
            grads = backward(loss, {n: bundle.params[n] for n in state.names})
            adam_step(bundle.params, grads, state)
        except NumericError as e:
            raise NumericError(str(e), stage=stage, epoch=epoch, batch=batch) from e

    def _epochs(self, stage: int, epochs: int):
        return tqdm(range(1, epochs + 1), desc=f"stage {stage}", disable=not self.config.progress)

    def _finish_epoch(self, report: LossReport, bundle: ModelBundle, reports: List[LossReport],
                      on_epoch_end: Optional[EpochCallback]) -> None:
        fields = ", ".join(f"{k}={v:.6g}" for k, v in report.metrics().items())
        logger.info(f"stage {report.stage} epoch {report.epoch}: {fields}")
        for key, value in report.metrics().items():
            if not np.isfinite(value):
                raise NumericError(f"non-finite {key}", stage=report.stage, epoch=report.epoch)
        reports.append(report)
        if on_epoch_end is not None:
            on_epoch_end(report, bundle)

    def pretrain_recommender(self, bundle: ModelBundle, reports: List[LossReport],
                             on_epoch_end: Optional[EpochCallback] = None) -> None:
        c = self.config
        state = self._adam(bundle, (THETA,))
        anneal_steps = c.stage1_epochs * self.n_batches
        step = 0
        for epoch in self._epochs(1, c.stage1_epochs):
            tally = _Tally()
            for b, rows in enumerate(self._batches(1, epoch, _EXPERT_ORDER)):
                rng = noise_stream(c.seed, 1, epoch, _BATCH_NOISE, b)
                v0 = Tensor(np.zeros((len(rows), bundle.config.feedback_dim)))
                out = bundle.recommender.forward(bundle.params, normalize_rows(rows, bundle.n_items), v0,
                                                 mode=SampleMode.SAMPLE, dropout_on=True, rng=rng)
                elbo = elbo_loss(rows, out.logits, out.mu, out.logvar, beta_at(step, bundle.config, anneal_steps))
                self._update(elbo + l2_penalty(bundle.params, c.l2_penalty), bundle, state, 1, epoch, b)
                tally.add(len(rows), loss_rec=elbo.item() / len(rows))
                step += 1
            self._finish_epoch(tally.report(1, epoch), bundle, reports, on_epoch_end)

    def pretrain_reward(self, bundle: ModelBundle, reports: List[LossReport],
                        on_epoch_end: Optional[EpochCallback] = None) -> None:
        c = self.config
        state = self._adam(bundle, (PHI,))
        for epoch in self._epochs(2, c.stage2_epochs):
            tally = _Tally()
            batches = zip(self._batches(2, epoch, _EXPERT_ORDER), self._batches(2, epoch, _POLICY_ORDER))
            for b, (expert_rows, policy_rows) in enumerate(batches):
                actions = unroll(policy_rows, bundle, 0, mode=LoopMode.EVAL).final.a.data
                adv = loss_adversarial(expert_rows, policy_rows, actions, bundle)
                self._update(-adv.objective, bundle, state, 2, epoch, b)
                tally.add(len(expert_rows), loss_adv=adv.objective.item(),
                          mean_reward_expert=adv.mean_reward_expert, mean_reward_policy=adv.mean_reward_policy)
            self._finish_epoch(tally.report(2, epoch), bundle, reports, on_epoch_end)

    def train_loop(self, bundle: ModelBundle, reports: List[LossReport],
                   on_epoch_end: Optional[EpochCallback] = None) -> None:
        c = self.config
        generator = self._adam(bundle, (THETA, PSI, FUSION))
        discriminator = self._adam(bundle, (PHI,))
        for epoch in self._epochs(3, c.stage3_epochs):
            tally = _Tally()
            batches = zip(self._batches(3, epoch, _POLICY_ORDER), self._batches(3, epoch, _EXPERT_ORDER))
            for b, (rows, expert_rows) in enumerate(batches):
                rng = noise_stream(c.seed, 3, epoch, _BATCH_NOISE, b)
                collab = loss_collaborative(rows, bundle, c.T, rng=rng, entropy_weight=c.entropy_weight,
                                            mode=LoopMode.TRAIN, use_feedback=c.use_feedback)
                self._update(collab.loss + l2_penalty(bundle.params, c.l2_penalty), bundle, generator, 3, epoch, b)

                actions = collab.trajectory.final.a.data
                adv = loss_adversarial(expert_rows, rows, actions, bundle)
                self._update(-adv.objective, bundle, discriminator, 3, epoch, b)

                tally.add(len(rows), loss_rec=collab.elbo / len(rows), loss_collab=collab.loss.item(),
                          loss_adv=adv.objective.item(), mean_reward_expert=adv.mean_reward_expert,
                          mean_reward_policy=adv.mean_reward_policy)
            self._finish_epoch(tally.report(3, epoch), bundle, reports, on_epoch_end)

    def train(self, bundle: Optional[ModelBundle] = None, on_epoch_end: Optional[EpochCallback] = None,
              on_stage_end: Optional[StageCallback] = None) -> TrainingResult:
        """Runs every stage the bundle has not completed yet."""
        if bundle is None:
            if self.recommender_config is None:
                raise ParameterError("a recommender config is needed to initialize a new model")
            bundle = ModelBundle.initialize(self.recommender_config, self.config.seed)
        bundle.check_vocabulary(self.split.n_items)

        stages = (
            (1, self.config.stage1_epochs, self.pretrain_recommender),
            (2, self.config.stage2_epochs, self.pretrain_reward),
            (3, self.config.stage3_epochs, self.train_loop),
        )
        reports: List[LossReport] = []
        for stage, epochs, run in stages:
            if stage in bundle.completed_stages:
                logger.info(f"stage {stage} already completed, skipping")
                continue
            if epochs == 0:
                continue
            logger.info(f"stage {stage}: {epochs} epoch(s) over {len(self.rows)} users in {self.n_batches} batch(es)")
            run(bundle, reports, on_epoch_end)
            bundle.mark_stage(stage, epochs)
            if on_stage_end is not None:
                on_stage_end(stage, bundle)
        return TrainingResult(bundle=bundle, reports=reports)


def train(config: TrainingConfig, split: SplitSet, recommender_config: Optional[RecommenderConfig] = None,
          bundle: Optional[ModelBundle] = None, on_epoch_end: Optional[EpochCallback] = None) -> TrainingResult:
    return ModelTrainer(config, split, recommender_config).train(bundle=bundle, on_epoch_end=on_epoch_end)
