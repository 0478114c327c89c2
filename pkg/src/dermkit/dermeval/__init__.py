from .evalformat import DIMENSIONS, EvalText, ParseFailure, ScoreVector, parse_eval, render_eval
from .filtering import BalanceInfeasibleError, FilterResult, FilterSpec, filter_candidates
from .rl import RLState, ema_update, reward, sor_loss, two_stage_train

__all__ = [
    "DIMENSIONS",
    "EvalText",
    "ParseFailure",
    "ScoreVector",
    "parse_eval",
    "render_eval",
    "BalanceInfeasibleError",
    "FilterResult",
    "FilterSpec",
    "filter_candidates",
    "RLState",
    "ema_update",
    "reward",
    "sor_loss",
    "two_stage_train",
]
