use clap::Args;
use lorahop::phy::{lorawan_time_on_air, time_on_air, RadioParams};

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct ToaArgs {
    /// PHY payload in bytes (application payload with --lorawan).
    #[arg(long)]
    pub payload: usize,
    #[arg(long, default_value_t = 9)]
    pub sf: u8,
    /// Bandwidth in Hz.
    #[arg(long, default_value_t = 125_000)]
    pub bw: u32,
    /// Coding rate denominator, 5 for 4/5 up to 8 for 4/8.
    #[arg(long, default_value_t = 5)]
    pub cr: u8,
    #[arg(long, default_value_t = 8)]
    pub preamble: u16,
    #[arg(long)]
    pub implicit_header: bool,
    #[arg(long)]
    pub no_crc: bool,
    /// Low data rate optimisation.
    #[arg(long)]
    pub ldro: bool,
    /// Adds the LoRaWAN frame overhead to the payload.
    #[arg(long)]
    pub lorawan: bool,
}

impl ToaArgs {
    fn radio(&self) -> RadioParams {
        RadioParams {
            spreading_factor: self.sf,
            bandwidth_hz: self.bw,
            coding_rate_denominator: self.cr,
            preamble_symbols: self.preamble,
            explicit_header: !self.implicit_header,
            crc_on: !self.no_crc,
            low_data_rate_opt: self.ldro,
        }
    }
}

pub fn run(args: &ToaArgs) -> Result<String, CliError> {
    let radio = args.radio();
    let airtime = if args.lorawan {
        lorawan_time_on_air(args.payload, &radio)?
    } else {
        time_on_air(args.payload, &radio)?
    };
    Ok(format!("{:.3} ms", airtime.as_millis()))
}
