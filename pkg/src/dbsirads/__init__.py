"""Monte-Carlo diffusion MRI simulation and two-stage axial-diffusivity
spectrum fitting for quantifying healthy and diseased axon fractions."""

import os

# the default layer probes an outdated TBB on some systems and warns on
# every parallel launch; the work queue is always available
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
