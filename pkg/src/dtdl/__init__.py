"""Energy disaggregation: an LSTM auto-encoder trained jointly with a
nonlinear dictionary and sparse codes, plus classic-dictionary and
simple-mean baselines, metrics, and a reproducible CLI."""

from .baselines import CdlModel, SmpModel, cdl_code, cdl_train, smp_predict, smp_train
from .dictionary_learner import (
    Dictionary,
    DualAscentResult,
    closed_form_D,
    collect_features,
    dual_ascent,
    incoherence_grad_step,
    incoherence_value,
    init_dictionary,
    project_columns,
)
from .disaggregator import (
    DisaggregationReport,
    disaggregate_signal,
    disaggregate_window,
    disaggregate_windows,
    evaluate_on_dataset,
    on_off,
)
from .lstm_ae import (
    ForwardTape,
    LstmAeParams,
    ParamGradients,
    apply_update,
    autoencode,
    backward,
    decode,
    encode,
    init_params,
    lstm_step,
    snippet_loss,
)
from .metrics import MetricSet, disagg_accuracy, f_score, metric_set, precision_recall
from .model_io import ModelBundle, load_model, save_model
from .seeding import spawn_rng
from .signal_data import (
    ApplianceModel,
    ApplianceState,
    RawChannel,
    Scaler,
    SignalError,
    SyntheticSpec,
    WindowedDataset,
    aggregate,
    load_house_csv,
    make_windows,
    resample_to_1hz,
    split_dataset,
    synth_household,
)
from .sparse_coder import (
    AdmmOptions,
    CodingGroup,
    SmoothnessMatrix,
    SparseCodeMatrix,
    build_G,
    lasso_code,
    pjadmm_solve,
    soft_threshold,
    solve_training_codes,
)
from .trainer import (
    DtdlModel,
    HyperParams,
    NumericAbort,
    ObjectiveBreakdown,
    evaluate_objective,
    train,
    validate_grid,
)

__version__ = "0.1.0"
