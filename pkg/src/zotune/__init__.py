"""zotune: zeroth-order fine-tuning with a rewrite-and-judge data pipeline.

The training core estimates gradients from two forward passes along a
seed-regenerable Gaussian direction (never storing the direction), with
first-order AdamW and LoRA baselines for comparison. Around it: a prompt
template engine, pluggable chat backends, the rewrite-judge-reject corpus
pipeline, judge calibration against human labels, a synthetic
noisy-phrasing task, and a six-condition experiment grid.
"""

from .backends import (
    API_KEY_ENV,
    BackendError,
    CachingBackend,
    ChatRequest,
    ChatResponse,
    FixtureBackend,
    HTTPBackend,
    RetryExhaustedError,
    RewriteRules,
    RuleRewriterBackend,
    ScriptedBackend,
    TransientBackendError,
    cached_send,
    rule_rewriter_send,
    send_with_retry,
)
from .calibration import (
    CalibrationOutcome,
    CalibrationReport,
    LabeledPair,
    calibration_loop,
    evaluate_judge,
)
from .data import (
    AlignmentError,
    ArraySplits,
    DataError,
    Dataset,
    FeatureExtractor,
    FieldSpec,
    Instance,
    TaskSchema,
    align_check,
    builtin_schemas,
    featurize,
    load_jsonl,
    save_jsonl,
    split,
)
from .estimators import FirstOrderClassifier, HashingTextVectorizer, ZeroOrderClassifier
from .grid import (
    DESK_GRID,
    PAPER_GRID,
    ExperimentGrid,
    FOGrid,
    LoRAGrid,
    ResultTable,
    ZOGrid,
    emit_report,
    run_grid,
)
from .models import (
    FOConfig,
    LinearClassifier,
    LoRAAdapter,
    LoRALinear,
    LoRAMLP,
    MLPClassifier,
    analytic_gradient,
    attach_lora,
    forward_loss,
    load_checkpoint,
    predict_accuracy,
    save_checkpoint,
    theta_evaluator,
    train_fo,
)
from .pipeline import (
    GateDecision,
    PipelineReport,
    RewriteResult,
    Verdict,
    assemble_few_shot,
    build_corpus,
    judge_pair,
    rejection_gate,
    rewrite_instance,
)
from .synth import SyntheticTaskSpec, generate_synthetic_task
from .templates import (
    FewShotExemplar,
    PromptTemplate,
    TemplateError,
    load_template,
    parse_template,
    render,
    save_template,
    template_transfer,
)
from .trace import TraceRecord, TrainingTrace
from .zo import (
    GradientEstimate,
    NumericOverflowError,
    PerturbationSeed,
    StepRecord,
    ZOConfig,
    finite_difference_oracle,
    materialize_estimate,
    mezo_step,
    sample_direction,
    spsa_estimate,
    train_zo,
)

__version__ = "0.1.0"
