"""Training-free objectives for the architecture search."""
from __future__ import annotations

from typing import Callable, Sequence

from ..training import EvalSet, evaluate_psnr
from ..unet import BlockLibrary, assemble, validate_code
from .space import W_SURROGATE, W_TEACHER, penalty


def psnr_difference(code: Sequence[int], library: BlockLibrary, eval_set: EvalSet, teacher_psnr: float) -> float:
    """Teacher PSNR minus the PSNR of the hybrid ``code`` on the fixed evaluation set."""
    code = validate_code(code, library.specs)
    if not any(code):
        # the teacher against itself: exact by construction
        return 0.0
    net = assemble(code, library)
    return float(teacher_psnr - evaluate_psnr(net, eval_set.degraded, eval_set.clean))


def make_objective(library: BlockLibrary, eval_set: EvalSet, teacher_psnr: float | None = None,
                   w_teacher: float = W_TEACHER, w_surrogate: float = W_SURROGATE
                   ) -> Callable[[tuple[int, ...]], tuple[float, float]]:
    """``z -> (psnr_difference, penalty)`` bound to one library and evaluation set."""
    if teacher_psnr is None:
        teacher_psnr = evaluate_psnr(library.teacher_network(), eval_set.degraded, eval_set.clean)

    def objective(z):
        return (psnr_difference(z, library, eval_set, teacher_psnr),
                penalty(z, library.specs, w_teacher, w_surrogate))

    objective.teacher_psnr = teacher_psnr
    return objective
