"""Local-first natural-language database assistant.

Core building blocks: document ingestion and chunking, a three-way indexed
knowledge base (vector / inverted / graph), dual-encoder embeddings with a
contrastive training loop, retrieval, adaptive prompt construction with PII
masking, schema-aware text-to-SQL with execution-accuracy scoring, a
multi-model serving gateway with a latency/throughput benchmark, and a
bounded tool-using agent loop. The `service` subpackage exposes everything
over HTTP; `cli` is the command-line entry point.
"""

__version__ = "0.1.0"
