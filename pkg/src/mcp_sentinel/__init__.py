"""Signing gateway and adversarial evaluation harness for MCP tool descriptors.

Modules:
    manifest  - descriptors, canonical bytes, RSA-PSS signing, digest registry
    adversary - testbed, attack generators, exposure metrics, prompt optimizer
    defense   - static filter, semantic vetting, signature enforcement, stack
    policy    - simulated decision policies and behavioral metrics
    harness   - evaluation loop, trial logs, rates, composites, calibration
    stats     - Wilson intervals, chi-square, ANOVA, correlation
    report    - JSON and text table rendering
    cli       - the `sentinel` command line
"""

from .manifest import (
    ActionTag,
    DescriptorRegistry,
    RugPullStatus,
    SignedManifest,
    ToolCategory,
    ToolDescriptor,
    Variant,
    canonicalize,
    check_rug_pull,
    generate_keypair,
    register,
    sign_manifest,
    verify_manifest,
)
from .adversary import (
    AttackScenario,
    PoisonPosition,
    Testbed,
    TestbedConfig,
    apply_poisoning,
    apply_rug_pull,
    apply_shadowing,
    build_testbed,
    coverage,
    exposure,
    optimize_prompt,
)
from .defense import (
    DefenseDeps,
    DefenseLayer,
    DefenseStackConfig,
    DefenseVerdict,
    Decision,
    HeuristicVetter,
    enforce_signature,
    filter_context,
    run_stack,
    static_filter,
    vet,
)
from .policy import (
    DecisionPolicy,
    PromptStrategy,
    ScenarioKind,
    SelectionOutcome,
    StrategyKind,
    apply_strategy,
    decision_divergence,
    descriptor_drift,
    prompt_complexity,
    select_tool,
    semantic_deviation,
)
from .harness import (
    CompositeWeights,
    ExperimentConfig,
    MetricsReport,
    TrialRecord,
    compute_rates,
    composite_scores,
    latency_descriptives,
    run_calibration,
    run_evaluation,
    summarize,
)
from .stats import anova_one_way, chi_square, pearson_r, wilson_interval

__version__ = "0.1.0"
