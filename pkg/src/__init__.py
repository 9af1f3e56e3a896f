"""
Dyna-Style Model-Based PPO Framework
====================================

Trains a command-tracking locomotion policy on a low-dimensional quadruped
surrogate with PPO, and appends a few model-generated steps to the end of
every rollout so the policy learns from more transitions than the simulator
produced.

## Package Structure

### Core Modules
- **nn_core**: Dense networks, exact backpropagation, Adam and gradient clipping
- **env_surrogate**: Vectorized 4-joint quadruped surrogate with tracking rewards
- **policy**: Gaussian actor and value critic
- **ppo**: GAE and the clipped-surrogate update
- **dyna**: Predictive model, synthetic-step scheduler, synthetic tails, merging
- **experiment**: Training loop, ablation, preset comparison, tracking heatmap

### Support Modules
- **run_config**: key=value config files, overrides, run manifests
- **checkpoint**: Binary checkpoint container
- **database**: SQLite run registry
- **background_processor**: Threaded execution of queued runs
- **cli**: Command-line entry point

## Quick Start

```python
from src.experiment import TrainConfig, train_run, steps_to_threshold
from src.dyna import SchedulerConfig

config = TrainConfig(seed=1, rollout_length=22,
                     scheduler=SchedulerConfig(a=0, b=500, x=0, y=2))
result = train_run(config)
print(result.metrics.tail())
```
"""

__version__ = "1.0.0"
__description__ = "Dyna-style rollout augmentation for PPO locomotion training"

from .dyna import ModelConfig, SchedulerConfig, scheduler_ns
from .env_surrogate import EnvParams
from .errors import ConfigError, DynaError, NumericalError, RolloutError
from .experiment import (
    PRESETS,
    HeatmapSpec,
    TrainConfig,
    ablate_rollout_lengths,
    compare_configurations,
    eval_tracking_heatmap,
    steps_to_threshold,
    train_run,
)
from .policy import PolicyConfig
from .ppo import PpoHyper

__all__ = [
    'ModelConfig',
    'SchedulerConfig',
    'scheduler_ns',
    'EnvParams',
    'ConfigError',
    'DynaError',
    'NumericalError',
    'RolloutError',
    'PRESETS',
    'HeatmapSpec',
    'TrainConfig',
    'ablate_rollout_lengths',
    'compare_configurations',
    'eval_tracking_heatmap',
    'steps_to_threshold',
    'train_run',
    'PolicyConfig',
    'PpoHyper',
]
