//! The split-learning round protocol.
//!
//! A round moves one mini-batch through the mesh. Every domain pushes its
//! feature block through its own segment and sends the cut-layer activations
//! to the server; the server concatenates them column-wise (ascending domain
//! index, regardless of arrival order), finishes the forward pass, and the
//! gradient makes the reverse trip, split back at the same column offsets.
//! In the label-sharing topology the loss is computed server-side; in the
//! U-shaped topology the server output travels on to a label holder who owns
//! both the final head and the labels, and the gradient path doubles back
//! through the server.
//!
//! Every cross-boundary tensor is serialized through the wire codec and
//! recorded in a [`Transcript`], so tests can both exercise the codec on
//! every round and audit exactly what each role was able to observe.
//!
//! [`run_round_centralized`] is the fused counterpart: identical math on the
//! same segments, executed in one place with no messages. Concatenation
//! aggregation makes the split network an exact partition of that monolith,
//! so the two runs agree parameter-for-parameter; the acceptance suite pins
//! this down to near bit-exactness.

mod audit;
mod transcript;
pub mod wire;

pub use audit::{audit_no_peek, NoPeekViolation};
pub use transcript::{Transcript, TranscriptEntry};
pub use wire::{decode_frame, encode_frame, frame_crc};

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{bce_loss, NetworkSegment, OptimizerConfig};
use crate::tensor::{concat_columns, split_columns, Tensor};

/// A party in the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RoleId {
    Domain(u16),
    Server,
    LabelHolder,
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoleId::Domain(i) => write!(f, "domain:{i}"),
            RoleId::Server => write!(f, "server"),
            RoleId::LabelHolder => write!(f, "label_holder"),
        }
    }
}

/// Where the model lives and who owns the labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    /// One implicit owner of all features and labels; no messages.
    Centralized,
    /// Labels live with the server; the loss is computed server-side.
    SplitLabelSharing,
    /// Labels live with a separate label holder; the gradient path is
    /// U-shaped through the server.
    SplitUShaped,
}

/// Message discriminants, matching the wire `msg_type` byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    Cut = 1,
    Grad = 2,
    Logits = 3,
    LossGrad = 4,
    Control = 5,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(MessageKind::Cut),
            2 => Some(MessageKind::Grad),
            3 => Some(MessageKind::Logits),
            4 => Some(MessageKind::LossGrad),
            5 => Some(MessageKind::Control),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::Cut => "cut",
            MessageKind::Grad => "grad",
            MessageKind::Logits => "logits",
            MessageKind::LossGrad => "loss_grad",
            MessageKind::Control => "control",
        }
    }
}

/// Cut-layer activations crossing a domain boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct CutMessage {
    pub round: u32,
    pub domain: u16,
    pub batch_rows: usize,
    pub activations: Tensor,
}

impl CutMessage {
    pub fn new(round: u32, domain: u16, activations: Tensor) -> Result<Self> {
        if activations.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "cut activations must be batch×width, got {:?}",
                activations.shape()
            )));
        }
        Ok(Self {
            round,
            domain,
            batch_rows: activations.rows(),
            activations,
        })
    }
}

/// Gradient of the loss with respect to one domain's cut activations.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMessage {
    pub round: u32,
    pub domain: u16,
    pub gradients: Tensor,
}

/// Server output or loss gradient travelling the server↔label-holder leg of
/// the U-shaped topology.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMessage {
    pub round: u32,
    pub tensor: Tensor,
}

/// Any message the wire codec can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Cut(CutMessage),
    Grad(GradMessage),
    Logits(StageMessage),
    LossGrad(StageMessage),
    Control { round: u32 },
}

/// Phases of one round, in their only legal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundPhase {
    AwaitCuts,
    ServerForward,
    /// U-shaped topology only.
    HeadForward,
    Backward,
    Update,
    Done,
}

/// Lockstep state machine for one round. The server blocks in `AwaitCuts`
/// until every domain has delivered; phases advance strictly in order.
#[derive(Debug, Clone)]
pub struct RoundState {
    round: u32,
    topology: TopologyKind,
    num_domains: usize,
    phase: RoundPhase,
    received: BTreeSet<usize>,
}

impl RoundState {
    pub fn new(round: u32, num_domains: usize, topology: TopologyKind) -> Result<Self> {
        if num_domains == 0 {
            return Err(Error::Argument("a round needs at least one domain".into()));
        }
        if topology == TopologyKind::Centralized {
            return Err(Error::Protocol(
                "centralized training does not run the round protocol".into(),
            ));
        }
        Ok(Self {
            round,
            topology,
            num_domains,
            phase: RoundPhase::AwaitCuts,
            received: BTreeSet::new(),
        })
    }

    pub fn phase(&self) -> RoundPhase {
        self.phase
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Registers one domain's cut message.
    pub fn receive_cut(&mut self, msg: &CutMessage) -> Result<()> {
        if self.phase != RoundPhase::AwaitCuts {
            return Err(Error::Protocol(format!(
                "cut message in phase {:?}",
                self.phase
            )));
        }
        if msg.round != self.round {
            return Err(Error::Protocol(format!(
                "cut message for round {} during round {}",
                msg.round, self.round
            )));
        }
        let idx = msg.domain as usize;
        if idx >= self.num_domains {
            return Err(Error::Protocol(format!(
                "cut message from unknown domain {idx} (mesh has {})",
                self.num_domains
            )));
        }
        if !self.received.insert(idx) {
            return Err(Error::Protocol(format!(
                "duplicate cut message from domain {idx}"
            )));
        }
        Ok(())
    }

    /// Moves to the next phase. Leaving `AwaitCuts` fails fast with a
    /// straggler error naming the first absent domain.
    pub fn advance(&mut self) -> Result<RoundPhase> {
        self.phase = match self.phase {
            RoundPhase::AwaitCuts => {
                if let Some(missing) = (0..self.num_domains).find(|i| !self.received.contains(i)) {
                    return Err(Error::Straggler(missing));
                }
                RoundPhase::ServerForward
            }
            RoundPhase::ServerForward => match self.topology {
                TopologyKind::SplitUShaped => RoundPhase::HeadForward,
                _ => RoundPhase::Backward,
            },
            RoundPhase::HeadForward => RoundPhase::Backward,
            RoundPhase::Backward => RoundPhase::Update,
            RoundPhase::Update => RoundPhase::Done,
            RoundPhase::Done => {
                return Err(Error::Protocol("round already complete".into()));
            }
        };
        Ok(self.phase)
    }
}

/// Concatenates one cut message per domain into the server input, ordered by
/// ascending domain index no matter the arrival order.
pub fn aggregate_concat(cuts: &[CutMessage], num_domains: usize) -> Result<Tensor> {
    if num_domains == 0 {
        return Err(Error::Argument("aggregation over zero domains".into()));
    }
    let mut by_domain: Vec<Option<&CutMessage>> = vec![None; num_domains];
    for cut in cuts {
        let idx = cut.domain as usize;
        if idx >= num_domains {
            return Err(Error::Protocol(format!(
                "cut message from unknown domain {idx} (mesh has {num_domains})"
            )));
        }
        if by_domain[idx].replace(cut).is_some() {
            return Err(Error::Protocol(format!(
                "duplicate cut message from domain {idx}"
            )));
        }
    }
    if let Some(missing) = by_domain.iter().position(Option::is_none) {
        return Err(Error::Straggler(missing));
    }
    let ordered: Vec<&CutMessage> = by_domain.into_iter().map(Option::unwrap).collect();
    let round = ordered[0].round;
    let rows = ordered[0].batch_rows;
    for cut in &ordered {
        if cut.round != round {
            return Err(Error::Protocol(format!(
                "mixed rounds in aggregation: {} and {}",
                round, cut.round
            )));
        }
        if cut.batch_rows != rows || cut.activations.rows() != rows {
            return Err(Error::Alignment(format!(
                "domain {} sent {} rows, expected {rows}",
                cut.domain,
                cut.activations.rows()
            )));
        }
    }
    let parts: Vec<Tensor> = ordered.iter().map(|c| c.activations.clone()).collect();
    concat_columns(&parts)
}

/// Sends a frame across a role boundary: encode, decode on the receiving
/// side, and record the exchange. Returns the decoded frame.
fn transmit(
    transcript: &mut Transcript,
    frame: Frame,
    kind: MessageKind,
    from: RoleId,
    to: RoleId,
) -> Result<Frame> {
    let bytes = wire::encode_frame(&frame);
    let decoded = wire::decode_frame(&bytes)?;
    let payload = match &decoded {
        Frame::Cut(m) => m.activations.clone(),
        Frame::Grad(m) => m.gradients.clone(),
        Frame::Logits(m) | Frame::LossGrad(m) => m.tensor.clone(),
        Frame::Control { .. } => Tensor::zeros(&[1]),
    };
    transcript.record(TranscriptEntry {
        round: match &decoded {
            Frame::Cut(m) => m.round,
            Frame::Grad(m) => m.round,
            Frame::Logits(m) | Frame::LossGrad(m) => m.round,
            Frame::Control { round } => *round,
        },
        kind,
        from,
        to,
        payload,
        crc: wire::frame_crc(&bytes)?,
    });
    Ok(decoded)
}

fn check_round_inputs(
    domains: &[NetworkSegment],
    domain_batches: &[Tensor],
    labels: &Tensor,
) -> Result<()> {
    if domains.is_empty() {
        return Err(Error::Argument("no domains".into()));
    }
    if domains.len() != domain_batches.len() {
        return Err(Error::Alignment(format!(
            "{} domains but {} feature blocks",
            domains.len(),
            domain_batches.len()
        )));
    }
    let rows = labels.rows();
    for (i, b) in domain_batches.iter().enumerate() {
        if b.shape().len() != 2 || b.rows() != rows {
            return Err(Error::Alignment(format!(
                "domain {i} feature block has shape {:?}, expected {rows} rows",
                b.shape()
            )));
        }
    }
    if labels.shape().len() != 2 || labels.cols() != 1 {
        return Err(Error::Dimension(format!(
            "labels must be batch×1, got {:?}",
            labels.shape()
        )));
    }
    Ok(())
}

/// Forward phase shared by both split topologies: every domain produces its
/// cut message, the messages cross the boundary, and the server aggregates.
fn domain_forward_and_aggregate(
    state: &mut RoundState,
    transcript: &mut Transcript,
    round: u32,
    domains: &mut [NetworkSegment],
    domain_batches: &[Tensor],
) -> Result<(Tensor, Vec<usize>)> {
    let mut cuts = Vec::with_capacity(domains.len());
    for (i, (seg, batch)) in domains.iter_mut().zip(domain_batches).enumerate() {
        let activations = seg.forward(batch)?;
        let msg = CutMessage::new(round, i as u16, activations)?;
        let frame = transmit(
            transcript,
            Frame::Cut(msg),
            MessageKind::Cut,
            RoleId::Domain(i as u16),
            RoleId::Server,
        )?;
        let Frame::Cut(cut) = frame else {
            return Err(Error::Protocol("cut frame decoded as another kind".into()));
        };
        state.receive_cut(&cut)?;
        cuts.push(cut);
    }
    state.advance()?; // AwaitCuts -> ServerForward (fails fast on stragglers)
    let widths: Vec<usize> = cuts.iter().map(|c| c.activations.cols()).collect();
    let aggregated = aggregate_concat(&cuts, domains.len())?;
    Ok((aggregated, widths))
}

/// Backward phase shared by both topologies: split the gradient of the
/// aggregated cut at the aggregation offsets and send each slice home, in
/// ascending domain index.
fn dispatch_grads_and_update(
    state: &mut RoundState,
    transcript: &mut Transcript,
    round: u32,
    domains: &mut [NetworkSegment],
    server: &mut NetworkSegment,
    head: Option<&mut NetworkSegment>,
    agg_grad: &Tensor,
    widths: &[usize],
    cfg: &OptimizerConfig,
) -> Result<()> {
    let slices = split_columns(agg_grad, widths)?;
    for (i, slice) in slices.into_iter().enumerate() {
        let frame = transmit(
            transcript,
            Frame::Grad(GradMessage {
                round,
                domain: i as u16,
                gradients: slice,
            }),
            MessageKind::Grad,
            RoleId::Server,
            RoleId::Domain(i as u16),
        )?;
        let Frame::Grad(grad) = frame else {
            return Err(Error::Protocol("grad frame decoded as another kind".into()));
        };
        domains[i].backward(&grad.gradients)?;
    }
    state.advance()?; // Backward -> Update
    for seg in domains.iter_mut() {
        seg.sgd_step(cfg)?;
    }
    server.sgd_step(cfg)?;
    if let Some(head) = head {
        head.sgd_step(cfg)?;
    }
    state.advance()?; // Update -> Done
    Ok(())
}

/// One label-sharing round: loss at the server, gradients straight back to
/// the domains. Returns the batch loss and the message transcript.
pub fn run_round_label_sharing(
    round: u32,
    domains: &mut [NetworkSegment],
    server: &mut NetworkSegment,
    domain_batches: &[Tensor],
    labels: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<(f64, Transcript)> {
    check_round_inputs(domains, domain_batches, labels)?;
    let mut transcript = Transcript::new();
    let mut state = RoundState::new(round, domains.len(), TopologyKind::SplitLabelSharing)?;

    let (aggregated, widths) =
        domain_forward_and_aggregate(&mut state, &mut transcript, round, domains, domain_batches)?;

    let logits = server.forward(&aggregated)?;
    let (loss, grad_logits) = bce_loss(&logits, labels)?;
    state.advance()?; // ServerForward -> Backward

    let agg_grad = server.backward(&grad_logits)?;
    dispatch_grads_and_update(
        &mut state,
        &mut transcript,
        round,
        domains,
        server,
        None,
        &agg_grad,
        &widths,
        cfg,
    )?;
    Ok((loss, transcript))
}

/// One U-shaped round: the server output travels to the label holder, the
/// loss is computed there, and the gradient doubles back through the server.
/// No message bound for the server may carry the label column; the round
/// fails with a no-peek violation if one does.
pub fn run_round_u_shaped(
    round: u32,
    domains: &mut [NetworkSegment],
    server: &mut NetworkSegment,
    label_head: &mut NetworkSegment,
    domain_batches: &[Tensor],
    labels: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<(f64, Transcript)> {
    check_round_inputs(domains, domain_batches, labels)?;
    let mut transcript = Transcript::new();
    let mut state = RoundState::new(round, domains.len(), TopologyKind::SplitUShaped)?;

    let (aggregated, widths) =
        domain_forward_and_aggregate(&mut state, &mut transcript, round, domains, domain_batches)?;

    let server_out = server.forward(&aggregated)?;
    let frame = transmit(
        &mut transcript,
        Frame::Logits(StageMessage {
            round,
            tensor: server_out,
        }),
        MessageKind::Logits,
        RoleId::Server,
        RoleId::LabelHolder,
    )?;
    let Frame::Logits(stage) = frame else {
        return Err(Error::Protocol("logits frame decoded as another kind".into()));
    };
    state.advance()?; // ServerForward -> HeadForward

    let logits = label_head.forward(&stage.tensor)?;
    let (loss, grad_logits) = bce_loss(&logits, labels)?;
    state.advance()?; // HeadForward -> Backward

    let grad_server_out = label_head.backward(&grad_logits)?;
    let frame = transmit(
        &mut transcript,
        Frame::LossGrad(StageMessage {
            round,
            tensor: grad_server_out,
        }),
        MessageKind::LossGrad,
        RoleId::LabelHolder,
        RoleId::Server,
    )?;
    let Frame::LossGrad(stage) = frame else {
        return Err(Error::Protocol("loss-grad frame decoded as another kind".into()));
    };

    let agg_grad = server.backward(&stage.tensor)?;
    dispatch_grads_and_update(
        &mut state,
        &mut transcript,
        round,
        domains,
        server,
        Some(label_head),
        &agg_grad,
        &widths,
        cfg,
    )?;

    // The label column must never be observable by the server.
    for v in audit::label_leaks_to_server(&transcript, labels) {
        return Err(Error::NoPeek(v.description));
    }
    Ok((loss, transcript))
}

/// The monolithic counterpart: identical math on the same segments, fused
/// into one process with a single update sweep and no messages. This is both
/// the centralized baseline topology and the oracle the split runs are
/// checked against.
pub fn run_round_centralized(
    domains: &mut [NetworkSegment],
    server: &mut NetworkSegment,
    mut label_head: Option<&mut NetworkSegment>,
    domain_batches: &[Tensor],
    labels: &Tensor,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    check_round_inputs(domains, domain_batches, labels)?;
    let mut parts = Vec::with_capacity(domains.len());
    let mut widths = Vec::with_capacity(domains.len());
    for (seg, batch) in domains.iter_mut().zip(domain_batches) {
        let act = seg.forward(batch)?;
        widths.push(act.cols());
        parts.push(act);
    }
    let aggregated = concat_columns(&parts)?;
    let server_out = server.forward(&aggregated)?;
    let logits = match label_head.as_deref_mut() {
        Some(head) => head.forward(&server_out)?,
        None => server_out,
    };
    let (loss, grad_logits) = bce_loss(&logits, labels)?;

    let grad_server_out = match label_head.as_deref_mut() {
        Some(head) => head.backward(&grad_logits)?,
        None => grad_logits,
    };
    let agg_grad = server.backward(&grad_server_out)?;
    let slices = split_columns(&agg_grad, &widths)?;
    for (seg, slice) in domains.iter_mut().zip(&slices) {
        seg.backward(slice)?;
    }

    for seg in domains.iter_mut() {
        seg.sgd_step(cfg)?;
    }
    server.sgd_step(cfg)?;
    if let Some(head) = label_head {
        head.sgd_step(cfg)?;
    }
    Ok(loss)
}
