//! Core algorithms of the CSI workbench: clock and synthesizer arithmetic,
//! an 802.11a/g/n baseband, a front-end impairment model, CSI calibration
//! and CFO/SFO analysis, the EchoProbe protocol and a virtual-time link
//! simulator.

pub mod capture;
pub mod clocking;
pub mod csikit;
mod dsp;
pub mod echoprobe;
pub mod error;
pub mod impairments;
pub mod phy;
pub mod simnet;

pub use capture::CaptureRecord;
pub use clocking::{Band, PllQuadruple};
pub use csikit::{CfoSfoEstimate, CsiFrame, DistortionTemplate, DistortionType};
pub use echoprobe::{ScanPlan, ScanReport};
pub use error::{Error, Result};
pub use impairments::ImpairmentProfile;
pub use phy::{BasebandBurst, ChannelMode, FrameConfig, GuardInterval, PhyMode, RxResult, SubcarrierGrid};
