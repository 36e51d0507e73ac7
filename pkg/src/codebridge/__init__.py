"""codebridge: desk-scale latent-bridge code generation.

Sentences of code are embedded on a Brownian bridge trajectory by a
contrastively trained encoder, a small autoregressive decoder generates
code conditioned on that latent plan, and generated programs are scored
by sandboxed pass@k evaluation.
"""

__version__ = "0.1.0"
