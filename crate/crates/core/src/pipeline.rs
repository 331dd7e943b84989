//! Per-admission glue between the stages of the pipeline.

use crate::corpus::Admission;
use crate::error::Result;
use crate::severity::{severity_timeline, FlagConfig, SeverityThresholds, SeverityTimeline};
use crate::textproc::{process_note, StructuredNote, TextResources};
use crate::timeline::{align_days, impute_missing, segment_stages, DailyConditionMap, StageSeries};

pub fn structure_admission(admission: &Admission, resources: &TextResources) -> Vec<StructuredNote> {
    admission
        .notes
        .iter()
        .map(|n| process_note(n, admission.day_of(n.chart_time), resources))
        .collect()
}

/// Day maps after imputation and the stage series built from them.
pub fn admission_stages(
    admission: &Admission,
    notes: &[StructuredNote],
) -> Result<(DailyConditionMap, StageSeries)> {
    let daily = impute_missing(&align_days(&admission.patient_id, admission.los_days, notes));
    let series = segment_stages(&daily, admission.disposition.as_ref())?;
    Ok((daily, series))
}

/// Text to severity in one call.
pub fn admission_severity(
    admission: &Admission,
    resources: &TextResources,
    flags: &FlagConfig,
    thresholds: &SeverityThresholds,
) -> Result<(StageSeries, SeverityTimeline)> {
    let notes = structure_admission(admission, resources);
    let (_, series) = admission_stages(admission, &notes)?;
    let timeline = severity_timeline(&series, &admission.vitals, admission.admit_date, flags, thresholds);
    Ok((series, timeline))
}
