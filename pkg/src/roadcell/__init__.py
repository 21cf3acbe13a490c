"""Highway cellular load generation from road detector data, and a benchmark
of how much road flow and speed help next-slot base-station load forecasts."""

__version__ = "0.1.0"
