"""Memory-augmented single-domain-generalization trainer.

Core package layout:

  numcore      float64 primitives, finite-difference oracle, seeded RNG
  model        encoder + two-slot head, manual backprop, SGD w/ momentum
  membank      attention read, k-means init, Langevin refresh, eviction
  trainer      losses, training loop, ablation modes, prediction
  data         synthetic domain-shift benchmarks and CSV ingest
  config       pydantic experiment schema
  checkpoint   exact-resume JSON persistence
  experiments  run / eval / sweep / ablate orchestration
  service      FastAPI app exposing the above over HTTP
  cli          thin client driving the service
"""

__version__ = "0.1.0"
