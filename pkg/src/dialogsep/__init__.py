"""Dialog separation and enhancement for stereo mixes."""
from .audio import AudioBuffer, AudioError, BandLayout, Spectrogram, StftConfig, istft, read_wav, stft, write_wav
from .pipeline import PipelineConfig, boost_gain_from_db, enhance, mix_boosted, separate_dialog

__version__ = "0.1.0"
