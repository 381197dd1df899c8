from src.utils.errors import ContractError


def lr_at(iteration: int, cfg) -> float:
    """Step decay: lr * decay_factor ** floor(iteration / decay_step)."""

    if iteration < 0:
        raise ContractError(f"iteration must be non-negative, got {iteration}")

    return cfg.lr * cfg.decay_factor ** (iteration // cfg.decay_step)
