"""Consistency-model speech enhancement over a fixed-end Brownian bridge."""

__version__ = "0.1.0"

from .bridge import (
    BridgeEndpoints,
    BridgeSchedule,
    ProcessState,
    analytic_flow,
    conditional_score,
    integrate_pf_ode,
    mean,
    perturb,
    pf_ode_drift,
    sde_drift,
    simulate_sde,
    std,
    time_grid,
)
from .config import RunConfig, default_config, load_config
from .data import CorpusConfig, Manifest, MixSpec, build_corpus, gen_clean, mix
from .metrics import seg_snr, si_sdr
from .model import (
    ConsistencyModel,
    ModelConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
    scaling,
)
from .sampler import enhance_waveform, measure_rtf
from .spectral import (
    ComplexSpectrogram,
    SpectralConfig,
    Waveform,
    analyze,
    read_wav,
    synthesize,
    write_wav,
)
from .training import TrainConfig, Trainer, TrainRecord, build_pair, consistency_loss, ema_update
