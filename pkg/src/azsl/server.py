"""Data-owner side: teacher training, feedback answering, weight export, serving.

Real feature rows never leave this module: responses contain only softmax rows,
scalars, and batch-shaped gradients. White-box requests additionally get the
cross-entropy gradient *through* the teacher (weights stay server-side) and
that is the only mid-risk feedback kind.
"""
from __future__ import annotations

import socket
import threading
from dataclasses import dataclass, field

import numpy as np

from . import audit, nn, wire
from .data import Dataset, SplitBundle
from .regularizers import RegularizerState, reg_value_grad
from .seeding import rng_for


@dataclass
class TeacherModel:
    """Trained teacher plus the ordered class ids its head columns map to."""

    params: nn.MlpParams
    class_space: np.ndarray
    train_accuracy: float
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.class_space = np.asarray(sorted(self.class_space), dtype=np.int64)
        if self.params.out_dim != len(self.class_space):
            raise ValueError("teacher head size must match its class space")

    def head_index(self, labels) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        idx = np.searchsorted(self.class_space, labels)
        bad = (idx >= len(self.class_space)) | (self.class_space[np.minimum(idx, len(self.class_space) - 1)] != labels)
        if bad.any():
            raise wire.ProtocolError(f"labels outside teacher class space: {np.unique(labels[bad])}")
        return idx


def teacher_layer_specs(d_x: int, n_classes: int, hidden=(1024, 512), slope: float = 0.2) -> list[nn.LayerSpec]:
    dims = [d_x, *hidden, n_classes]
    specs = [
        nn.LayerSpec(a, b, nn.ACT_LEAKY_RELU, slope) for a, b in zip(dims[:-2], dims[1:-1])
    ]
    specs.append(nn.LayerSpec(dims[-2], dims[-1], nn.ACT_IDENTITY))
    return specs


def train_teacher(
    dataset: Dataset,
    split: SplitBundle,
    epochs: int = 200,
    batch_size: int = 64,
    seed: int = 0,
    hidden=(1024, 512),
    lr: float = 1e-5,
) -> TeacherModel:
    """Cross-entropy + Adam on the teacher_train rows; fully seeded."""
    rows = split.teacher_train
    if rows.size == 0:
        raise ValueError("empty teacher training set")
    class_space = split.teacher_classes
    feats = dataset.features[rows]
    labels = dataset.labels[rows]

    params = nn.mlp_init(teacher_layer_specs(dataset.d_x, len(class_space), hidden), nn.ROLE_TEACHER, seed)
    model = TeacherModel(params=params, class_space=class_space, train_accuracy=0.0)
    head_labels = model.head_index(labels)

    state = nn.AdamState.for_params(params, lr=lr)
    rng = rng_for(seed, "teacher-batches")
    for _ in range(epochs):
        order = rng.permutation(len(feats))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            logits, cache = nn.mlp_forward(params, feats[idx])
            probs = nn.softmax(logits)
            value, grad_logits = nn.loss_ce(probs, head_labels[idx])
            grads, _ = nn.mlp_backward(params, cache, grad_logits)
            nn.adam_step(params, grads, state)
            epoch_loss += value * len(idx)
        model.loss_trace.append(epoch_loss / len(feats))

    logits, _ = nn.mlp_forward(params, feats)
    model.train_accuracy = float((logits.argmax(axis=1) == head_labels).mean())
    return model


def feedback(
    teacher: TeacherModel,
    reg_state: RegularizerState,
    request: wire.FeedbackRequest,
    log: audit.RiskLog | None = None,
    allowed_scenario: str | None = None,
) -> wire.FeedbackResponse:
    """Answer one uploaded batch; logs the disclosure (the downstream message)."""
    if allowed_scenario == wire.SCENARIO_BLACK and request.scenario == wire.SCENARIO_WHITE:
        raise wire.ProtocolError("white-box feedback refused: server is black-box only")
    if request.batch.shape[1] != teacher.params.in_dim:
        raise wire.ProtocolError(
            f"batch has {request.batch.shape[1]} columns, teacher expects {teacher.params.in_dim}"
        )
    if not np.isfinite(request.batch).all():
        raise wire.ProtocolError("uploaded batch contains non-finite values")
    head_labels = teacher.head_index(request.cond_labels)

    logits, cache = nn.mlp_forward(teacher.params, request.batch)
    probs = nn.softmax(logits)
    reg_value, reg_grad = reg_value_grad(reg_state, request.batch, request.cond_labels)

    ce_value = ce_grad = None
    if request.scenario == wire.SCENARIO_WHITE:
        ce_value, grad_logits = nn.loss_ce(probs, head_labels)
        _, ce_grad = nn.mlp_backward(teacher.params, cache, grad_logits)

    resp = wire.FeedbackResponse(
        softmax=probs if request.want_softmax else None,
        reg_value=reg_value,
        reg_grad=reg_grad,
        ce_value=ce_value,
        ce_grad=ce_grad,
    )
    if log is not None:
        payload = wire.encode_feedback_response(resp)
        kind = audit.KIND_CE_GRAD if ce_grad is not None else audit.KIND_FEEDBACK_RESPONSE
        log.append(kind, len(payload), resp.risk, request.scenario, audit.DOWN, payload)
    return resp


def export_weights(
    teacher: TeacherModel, scenario: str, log: audit.RiskLog | None = None
) -> bytes:
    """Serialized teacher weights; a logged mid-risk disclosure, white-box only."""
    if scenario != wire.SCENARIO_WHITE:
        if log is not None:
            log.append(audit.KIND_WEIGHT_REFUSAL, 0, wire.RISK_LOW, scenario, audit.DOWN)
        raise wire.ProtocolError("weight export refused outside the white-box scenario")
    blob = wire.encode_params(teacher.params)
    if log is not None:
        log.append(audit.KIND_WEIGHT_BLOB, len(blob), wire.RISK_MID, scenario, audit.DOWN, blob)
    return blob


class TeacherServer:
    """Stateful request handler shared by the in-process channel and the TCP loop."""

    def __init__(
        self,
        teacher: TeacherModel,
        reg_state: RegularizerState,
        scenario: str,
        log: audit.RiskLog | None = None,
    ):
        if scenario not in wire.SCENARIOS:
            raise ValueError(f"unknown scenario {scenario!r}")
        self.teacher = teacher
        self.reg_state = reg_state
        self.scenario = scenario
        self.log = log if log is not None else audit.RiskLog()

    def handle_payload(self, kind: int, payload: bytes) -> tuple[int, bytes]:
        """Decode one request payload, answer it, log both directions."""
        try:
            if kind == wire.KIND_FEEDBACK_REQUEST:
                request = wire.decode_feedback_request(payload)
                self.log.append(
                    audit.KIND_FEEDBACK_REQUEST, len(payload), wire.RISK_LOW,
                    request.scenario, audit.UP, payload,
                )
                resp = feedback(
                    self.teacher, self.reg_state, request,
                    log=self.log, allowed_scenario=self.scenario,
                )
                return wire.KIND_FEEDBACK_RESPONSE, wire.encode_feedback_response(resp)
            if kind == wire.KIND_WEIGHT_REQUEST:
                scenario = wire.decode_weight_request(payload)
                self.log.append(
                    audit.KIND_WEIGHT_REQUEST, len(payload), wire.RISK_LOW,
                    scenario, audit.UP, payload,
                )
                if self.scenario == wire.SCENARIO_BLACK:
                    scenario = wire.SCENARIO_BLACK  # server policy wins
                blob = export_weights(self.teacher, scenario, log=self.log)
                return wire.KIND_WEIGHT_BLOB, blob
            raise wire.ProtocolError(f"unsupported message kind {kind}", code=wire.ERR_BAD_KIND)
        except wire.ProtocolError as exc:
            payload = wire.encode_error(exc.code, str(exc))
            self.log.append(audit.KIND_ERROR, len(payload), wire.RISK_LOW, self.scenario, audit.DOWN, payload)
            return wire.KIND_ERROR, payload
        except Exception as exc:  # keep the loop alive; leak no internals
            payload = wire.encode_error(wire.ERR_SERVER, f"server error: {exc}")
            self.log.append(audit.KIND_ERROR, len(payload), wire.RISK_LOW, self.scenario, audit.DOWN, payload)
            return wire.KIND_ERROR, payload


def _recv_exact(conn: socket.socket, n: int) -> bytes | None:
    """None on clean EOF at a message boundary; raises if a frame is cut short."""
    chunks = []
    got = 0
    while got < n:
        chunk = conn.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise wire.ProtocolError("connection closed mid-frame", code=wire.ERR_BAD_FRAME)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def serve(
    endpoint: tuple[str, int],
    server: TeacherServer,
    stop_event: threading.Event | None = None,
    ready: "callable | None" = None,
) -> None:
    """Answer framed requests until stop_event is set; one request at a time."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(endpoint)
    sock.listen(4)
    sock.settimeout(0.2)
    if ready is not None:
        ready(sock.getsockname())
    try:
        while stop_event is None or not stop_event.is_set():
            try:
                conn, _ = sock.accept()
            except socket.timeout:
                continue
            with conn:
                # generous idle timeout: clients legitimately go quiet during
                # local training phases between requests
                conn.settimeout(300.0)
                while True:
                    try:
                        first = _recv_exact(conn, 1)
                        if first is None:
                            break
                        rest = _recv_exact(conn, 9)
                        if rest is None:
                            raise wire.ProtocolError("connection closed mid-frame", code=wire.ERR_BAD_FRAME)
                        header = first + rest
                        if header[:4] != wire.MAGIC:
                            raise wire.ProtocolError("bad magic", code=wire.ERR_BAD_FRAME)
                        if header[4] != wire.VERSION:
                            raise wire.ProtocolError("unsupported version", code=wire.ERR_BAD_VERSION)
                        kind = header[5]
                        length = int.from_bytes(header[6:10], "little")
                        if length > wire.MAX_PAYLOAD:
                            raise wire.ProtocolError("oversized frame", code=wire.ERR_BAD_FRAME)
                        payload = _recv_exact(conn, length) if length else b""
                        if payload is None:
                            raise wire.ProtocolError("connection closed mid-frame", code=wire.ERR_BAD_FRAME)
                    except wire.ProtocolError as exc:
                        err = wire.encode_error(exc.code, str(exc))
                        server.log.append(audit.KIND_ERROR, len(err), wire.RISK_LOW, server.scenario, audit.DOWN, err)
                        try:
                            conn.sendall(wire.frame(wire.KIND_ERROR, err))
                        except OSError:
                            pass
                        break  # malformed framing: close the connection
                    except OSError:
                        break  # idle timeout or reset: drop this connection only
                    out_kind, out_payload = server.handle_payload(kind, payload)
                    try:
                        conn.sendall(wire.frame(out_kind, out_payload))
                    except OSError:
                        break  # client went away; next connection
    finally:
        sock.close()
