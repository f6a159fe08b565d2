"""Two-stage text-to-music latent diffusion.

Stage 1 (`codec`) compresses audio into a bounded latent through a
magnitude-spectrogram encoder and decodes it back with a waveform-domain
diffusion denoiser. Stage 2 (`textgen`) generates those latents from text
with classifier-free guidance. `cli` exposes training, the codec,
generation and structure profiling.
"""

from .audio import Waveform, read_wav, write_wav
from .autodiff import ParamStore, Tensor, backward, no_grad
from .codec import CodecConfig, LatentCodec
from .config import RunConfig, default_config
from .diffusion import SamplerSchedule, add_noise, coeffs, ddim_step, sample, v_loss, v_target
from .spectral import Spectrogram, flatten_freq, istft, stft
from .textgen import ByteTableEmbedder, LatentGenerator, TextEmbedding, generate_waveform
from .unet import UNet1d, UNetConfig, build
from .training import AdamW, PowerEma, crop_sampler

__version__ = "0.1.0"

__all__ = [
    "AdamW", "ByteTableEmbedder", "CodecConfig", "LatentCodec", "LatentGenerator",
    "ParamStore", "PowerEma", "RunConfig", "SamplerSchedule", "Spectrogram", "Tensor",
    "TextEmbedding", "UNet1d", "UNetConfig", "Waveform", "add_noise", "backward",
    "build", "coeffs", "crop_sampler", "ddim_step", "default_config", "flatten_freq",
    "generate_waveform", "istft", "no_grad", "read_wav", "sample", "stft", "v_loss",
    "v_target", "write_wav",
]
