"""
servecast: analytical cost model, nano-batch schedule search and serving
simulator for tensor-parallel LLM inference.

    servecast.cost_model   per-iteration resource usage and the throughput bound
    servecast.pipeline     per-layer operation graphs with nano-batch splits
    servecast.autosearch   unit assignment search over a pipeline graph
    servecast.sim          iteration-level serving simulator
"""
