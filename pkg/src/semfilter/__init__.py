"""Semantic safety filter: CBF-QP certification of manipulator commands
against semantically synthesized and geometric constraints."""

__version__ = "0.1.0"

from .barriers import BarrierEval, BarrierStack, ClassK, build_stack, eval_class_k, evaluate_stack
from .envelopes import RELATIONSHIPS, Box, EnvelopeSet, build_envelope, split_by_parts
from .kinematics import (
    JointState,
    KinematicChain,
    Pose,
    diff_ik,
    forward_kinematics,
    fr3_chain,
    jacobians,
    load_chain,
    rotation_exp,
    rotation_log,
)
from .qp import (
    CertificationResult,
    InvalidState,
    QPInfeasible,
    QPProblem,
    RotationObjective,
    assemble,
    certify,
    rotation_cost_terms,
    solve,
)
from .scene import CommandStream, RunReport, Scene, load_scene, load_stream, smooth_stream, violation_metric
from .semantics import (
    FixtureClient,
    GroundTruthSet,
    HttpClient,
    QuerySpec,
    SemanticContext,
    build_prompt,
    evaluate,
    synthesize_context,
)
from .simulation import SimConfig, SimSession, adversarial_streams, brute_force_oracle, caution_comparison
from .superquadrics import FitDegenerate, PointCloud, Superquadric, sq_eval, sq_fit, sq_gradient, sq_mesh
