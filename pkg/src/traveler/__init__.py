"""Plan, retrieve, extract, evaluate and replan over video frames to answer multiple-choice questions."""

from .agents import AgentError, Agents
from .backends import BackendPool, CompletionRequest, CompletionResponse, OpenAIChatBackend, ScriptedBackend
from .frames import DirectoryFrameProvider, Frame, VideoFileProvider, expand_window, sample_even
from .harness import BenchmarkReport, ManifestItem, load_manifest, run_benchmark, write_traces
from .model import Answer, Continue, MemoryBank, MemoryEntry, Plan, QAPair, Question, RunConfig
from .orchestrator import RunResult, VideoMeta, run_question

__all__ = [
    "AgentError", "Agents", "Answer", "BackendPool", "BenchmarkReport", "CompletionRequest", "CompletionResponse",
    "Continue", "DirectoryFrameProvider", "Frame", "ManifestItem", "MemoryBank", "MemoryEntry", "OpenAIChatBackend",
    "Plan", "QAPair", "Question", "RunConfig", "RunResult", "ScriptedBackend", "VideoFileProvider", "VideoMeta",
    "expand_window", "load_manifest", "run_benchmark", "run_question", "sample_even", "write_traces",
]
