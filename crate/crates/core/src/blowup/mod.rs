//! Direct nonlinear integration with blow-up detection, and runtime monitors
//! for the non-existence mechanism: the `A_p` bound, its time-shifted form and
//! the mass growth of `h^p` at the critical exponent.

mod integrate;
mod monitor;

pub use integrate::{
    estimate_blowup_time, integrate_nonlinear, BlowupFit, BlowupReport, Classification, Controls,
    Termination, TraceRow,
};
pub use monitor::{
    ap_monitor, ap_monitor_with, mass_growth_monitor, shifted_ap_monitor, MassGrowth,
    MassGrowthReport, MonitorReport, MonitorVerdict, MONITOR_SLACK,
};
