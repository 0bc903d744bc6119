//! Case files, run configurations and result tables.

mod case_file;
mod config;
pub mod recipe;
mod results;

pub use case_file::{
    parse_case, BusEntry, CapabilityEntry, CaseFile, CostEntry, CostSelector, CurtailmentSection, DeviceEntry, FlexEntry,
    KindEntry, LinkEntry, PqVar, TermEntry, SCHEMA_VERSION,
};
pub use config::{BundleConfig, OutputConfig, PrimalConfig, RelaxationSelector, RunConfig, SdpConfig, Tolerances};
pub use results::{read_csv, to_csv_string, to_markdown_string, write_results, Format, ResultRow, COLUMNS};
