use serde::{Deserialize, Serialize};

use super::Sex;
use crate::error::{Error, Result};

/// Per-patient values that feed the cohort summary; `None` means unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PatientFacts {
    pub sex: Option<Sex>,
    pub age_years: Option<u32>,
    pub los_days: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_patients: usize,
    pub pct_male: f64,
    pub pct_female: f64,
    pub pct_age_under_18: f64,
    pub pct_age_18_40: f64,
    pub pct_age_41_60: f64,
    pub pct_age_61_80: f64,
    pub pct_age_over_80: f64,
    pub mean_length_of_stay_days: f64,
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Percentages are taken over patients whose value is known.
pub fn cohort_stats(patients: &[PatientFacts]) -> Result<CohortSummary> {
    if patients.is_empty() {
        return Err(Error::InvalidInput("cohort has zero patients".into()));
    }
    let sexes: Vec<Sex> = patients.iter().filter_map(|p| p.sex).collect();
    let males = sexes.iter().filter(|&&s| s == Sex::M).count();

    let ages: Vec<u32> = patients.iter().filter_map(|p| p.age_years).collect();
    let band = |lo: u32, hi: u32| ages.iter().filter(|&&a| a >= lo && a <= hi).count();

    let stays: Vec<u32> = patients.iter().filter_map(|p| p.los_days).collect();
    let mean_los = if stays.is_empty() {
        0.0
    } else {
        stays.iter().map(|&d| d as f64).sum::<f64>() / stays.len() as f64
    };

    Ok(CohortSummary {
        n_patients: patients.len(),
        pct_male: pct(males, sexes.len()),
        pct_female: pct(sexes.len() - males, sexes.len()),
        pct_age_under_18: pct(band(0, 17), ages.len()),
        pct_age_18_40: pct(band(18, 40), ages.len()),
        pct_age_41_60: pct(band(41, 60), ages.len()),
        pct_age_61_80: pct(band(61, 80), ages.len()),
        pct_age_over_80: pct(band(81, u32::MAX), ages.len()),
        mean_length_of_stay_days: mean_los,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_male_patient() {
        let s = cohort_stats(&[PatientFacts {
            sex: Some(Sex::M),
            age_years: Some(50),
            los_days: Some(5),
        }])
        .unwrap();
        assert_eq!(s.pct_male, 100.0);
        assert_eq!(s.pct_female, 0.0);
        assert_eq!(s.pct_age_41_60, 100.0);
        assert_eq!(s.mean_length_of_stay_days, 5.0);
    }

    #[test]
    fn mean_length_of_stay() {
        let p = |los| PatientFacts {
            los_days: Some(los),
            ..Default::default()
        };
        let s = cohort_stats(&[p(4), p(8)]).unwrap();
        assert_eq!(s.mean_length_of_stay_days, 6.0);
    }

    #[test]
    fn zero_patients_is_an_error() {
        assert!(cohort_stats(&[]).is_err());
    }

    #[test]
    fn percentages_are_bounded_and_sex_sums_to_100() {
        let facts: Vec<PatientFacts> = (0..37)
            .map(|i| PatientFacts {
                sex: if i % 3 == 0 { Some(Sex::F) } else if i % 7 == 0 { None } else { Some(Sex::M) },
                age_years: Some(i * 3),
                los_days: Some(2 + i % 9),
            })
            .collect();
        let s = cohort_stats(&facts).unwrap();
        assert!((s.pct_male + s.pct_female - 100.0).abs() < 0.1);
        let bands = [
            s.pct_age_under_18,
            s.pct_age_18_40,
            s.pct_age_41_60,
            s.pct_age_61_80,
            s.pct_age_over_80,
        ];
        assert!(bands.iter().all(|&b| (0.0..=100.0).contains(&b)));
        assert!((bands.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
}
