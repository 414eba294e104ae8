from .denoiser import COND_DIM, Denoiser, UnetConfig, apply_unet, init_params, step_embedding
from .sampling import (GuidanceConfig, NoiseOracle, condition_rows, denoise_step, forward_noise,
                       guided_noise, known_mask, loss_var, posterior_coefficients, predict_x0,
                       sample_sequence, sample_sequences, training_loss)
from .schedule import NoiseSchedule, make_schedule, schedule_from_alphas

__all__ = [
    "COND_DIM", "Denoiser", "GuidanceConfig", "NoiseOracle", "NoiseSchedule", "UnetConfig",
    "apply_unet", "condition_rows", "denoise_step", "forward_noise", "guided_noise",
    "init_params", "known_mask", "loss_var", "make_schedule", "posterior_coefficients",
    "predict_x0", "sample_sequence", "sample_sequences", "schedule_from_alphas",
    "step_embedding", "training_loss",
]
