"""
Codebook collapse, and its recovery
===================================

All 64 codewords start at the same point (the mean of the first batch).
Plain EMA training can only split that clump as far as assignments allow,
so most codewords stay dead. Online clustering, plus the balancing and
inter-stage SSIM losses, brings every codeword into use.

Takes about twenty seconds.
"""

# %%
import time

from ervq import trainer

base = trainer.canonical_collapse_config(seed=0, ervq_enabled=False)
ervq = trainer.canonical_collapse_config(seed=0)
print(f"{base.steps} steps, batch {base.batch_size}, K={base.codebook_size}, "
      f"{base.clusters} clusters, init={base.init_mode}, gamma={base.gamma}")

t0 = time.perf_counter()
arms = trainer.collapse_experiment(base, ervq)
print(trainer.collapse_summary(arms))
print(f"{time.perf_counter() - t0:.1f}s")

# %%
# With two stages the picture is less clean. The second stage of the
# baseline sees small residuals around zero, and its identical codewords
# peel off one at a time, so its utilization can end up anywhere from low
# to full depending on the seed. The first stage still collapses.
arms2 = trainer.collapse_experiment(trainer.canonical_collapse_config(0, ervq_enabled=False, num_stages=2),
                                    trainer.canonical_collapse_config(0, num_stages=2))
print(trainer.collapse_summary(arms2))

# %%
# The gradients driving the encoder and decoder are written by hand; a
# finite-difference check on a 31-parameter model keeps them honest.
model, x = trainer.small_model(0)
print({k: f"{v:.1e}" if isinstance(v, float) else v for k, v in trainer.grad_check(model, x).items()})
