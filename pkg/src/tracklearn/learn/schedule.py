from ..errors import DomainError

LR_FLOOR_FRACTION = 0.01


def lr_schedule(lr0: float, step: int, total_steps: int) -> float:
    """Linear decay from ``lr0`` to zero, floored at 1% of ``lr0``."""
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise DomainError(f"step {step} outside [0, {total_steps}]")
    return max(lr0 * (1.0 - step / total_steps), lr0 * LR_FLOOR_FRACTION)
