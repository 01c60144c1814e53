"""Risk-controlled prediction interval calibration."""

try:
    # installed wheel: the extension lives inside the package
    from ._riskcal import (
        BACKGROUND,
        COMBINED,
        FOREGROUND,
        ContractError,
        IrreduciblePenaltyError,
        TrainingError,
        build_interval,
        generate_phantom,
        hoeffding_ucb,
        interval_loss,
        predict,
        rcps_calibrate,
        run_trial,
        sg_rcps_calibrate,
        train_model,
    )
except ImportError:
    # in-tree layout: the extension sits on sys.path next to the build
    from _riskcal import (
        BACKGROUND,
        COMBINED,
        FOREGROUND,
        ContractError,
        IrreduciblePenaltyError,
        TrainingError,
        build_interval,
        generate_phantom,
        hoeffding_ucb,
        interval_loss,
        predict,
        rcps_calibrate,
        run_trial,
        sg_rcps_calibrate,
        train_model,
    )

__all__ = [
    "BACKGROUND",
    "COMBINED",
    "FOREGROUND",
    "ContractError",
    "IrreduciblePenaltyError",
    "TrainingError",
    "build_interval",
    "generate_phantom",
    "hoeffding_ucb",
    "interval_loss",
    "predict",
    "rcps_calibrate",
    "run_trial",
    "sg_rcps_calibrate",
    "train_model",
]
