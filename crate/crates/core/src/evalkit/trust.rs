//! Trust spectra: the distribution of the softmax probability assigned to
//! the TRUE class, per confusion group, and its scalar summary (NTS).
//!
//! Using the true-class probability (not the predicted-class one) is what
//! lets confidently wrong groups score near zero: a binary argmax winner
//! always has probability >= 0.5, but the truth's probability does not.

use serde::{Deserialize, Serialize};

use crate::classifier::Label;
use crate::error::{Error, Result};

use super::Prediction;

pub const TRUST_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Tp,
    Tn,
    Fp,
    Fn,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Tp => "TP",
            Group::Tn => "TN",
            Group::Fp => "FP",
            Group::Fn => "FN",
        }
    }

    pub fn of(p: &Prediction) -> Group {
        match (p.true_label, p.predicted_label()) {
            (Label::Class1, Label::Class1) => Group::Tp,
            (Label::Class0, Label::Class0) => Group::Tn,
            (Label::Class0, Label::Class1) => Group::Fp,
            (Label::Class1, Label::Class0) => Group::Fn,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustSpectrum {
    pub group: Group,
    /// Per-sample trust values (probability of the true class), in [0, 1].
    pub trusts: Vec<f64>,
    /// 50-bin histogram density over [0, 1]; integrates to 1.
    pub density: Vec<f64>,
    /// NetTrustScore: mean trust of the group.
    pub nts: f64,
}

/// Spectra for the four confusion groups; a group with no samples is absent.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TrustReport {
    pub tp: Option<TrustSpectrum>,
    pub tn: Option<TrustSpectrum>,
    pub fp: Option<TrustSpectrum>,
    pub fn_: Option<TrustSpectrum>,
}

impl TrustReport {
    pub fn get(&self, group: Group) -> Option<&TrustSpectrum> {
        match group {
            Group::Tp => self.tp.as_ref(),
            Group::Tn => self.tn.as_ref(),
            Group::Fp => self.fp.as_ref(),
            Group::Fn => self.fn_.as_ref(),
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &TrustSpectrum> {
        [&self.tp, &self.tn, &self.fp, &self.fn_]
            .into_iter()
            .filter_map(|g| g.as_ref())
    }
}

fn spectrum_of(group: Group, trusts: Vec<f64>) -> TrustSpectrum {
    let n = trusts.len() as f64;
    let bin_width = 1.0 / TRUST_BINS as f64;
    let mut density = vec![0.0; TRUST_BINS];
    for &t in &trusts {
        let bin = ((t / bin_width) as usize).min(TRUST_BINS - 1);
        density[bin] += 1.0;
    }
    for d in &mut density {
        *d /= n * bin_width;
    }
    let nts = trusts.iter().sum::<f64>() / n;
    TrustSpectrum {
        group,
        trusts,
        density,
        nts,
    }
}

pub fn trust_spectrum(preds: &[Prediction]) -> Result<TrustReport> {
    if preds.is_empty() {
        return Err(Error::usage("no predictions for the trust spectrum"));
    }
    let mut buckets: [Vec<f64>; 4] = Default::default();
    for p in preds {
        let trust = p.probabilities[p.true_label.index()];
        let slot = match Group::of(p) {
            Group::Tp => 0,
            Group::Tn => 1,
            Group::Fp => 2,
            Group::Fn => 3,
        };
        buckets[slot].push(trust);
    }
    let [tp, tn, fp, fn_] = buckets;
    Ok(TrustReport {
        tp: (!tp.is_empty()).then(|| spectrum_of(Group::Tp, tp)),
        tn: (!tn.is_empty()).then(|| spectrum_of(Group::Tn, tn)),
        fp: (!fp.is_empty()).then(|| spectrum_of(Group::Fp, fp)),
        fn_: (!fn_.is_empty()).then(|| spectrum_of(Group::Fn, fn_)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(true_label: Label, p1: f64) -> Prediction {
        Prediction {
            trial_id: "t".into(),
            subject_id: "s".into(),
            true_label,
            probabilities: [1.0 - p1, p1],
        }
    }

    #[test]
    fn all_correct_full_confidence() {
        let preds = vec![
            pred(Label::Class1, 1.0),
            pred(Label::Class0, 0.0),
            pred(Label::Class1, 1.0),
        ];
        let report = trust_spectrum(&preds).unwrap();
        assert_eq!(report.tp.as_ref().unwrap().nts, 1.0);
        assert_eq!(report.tn.as_ref().unwrap().nts, 1.0);
        assert!(report.fp.is_none());
        assert!(report.fn_.is_none());
    }

    #[test]
    fn confidently_wrong_prediction_scores_low() {
        // 0.9 on the wrong class means trust 0.1 for the truth, dragging the
        // group NTS below 0.2.
        let preds = vec![pred(Label::Class0, 0.9), pred(Label::Class1, 0.95)];
        let report = trust_spectrum(&preds).unwrap();
        let fp = report.fp.as_ref().unwrap();
        assert!((fp.trusts[0] - 0.1).abs() < 1e-12);
        assert!(fp.nts < 0.2);
    }

    #[test]
    fn group_means_match_scalar_loop() {
        let mut rng = crate::numerics::Rng::new(31);
        let preds: Vec<Prediction> = (0..100)
            .map(|_| {
                let label = if rng.uniform() < 0.5 {
                    Label::Class0
                } else {
                    Label::Class1
                };
                pred(label, rng.uniform())
            })
            .collect();
        let report = trust_spectrum(&preds).unwrap();

        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for p in &preds {
            let trust = p.probabilities[p.true_label.index()];
            let g = match Group::of(p) {
                Group::Tp => 0,
                Group::Tn => 1,
                Group::Fp => 2,
                Group::Fn => 3,
            };
            sums[g] += trust;
            counts[g] += 1;
        }
        for (i, group) in [Group::Tp, Group::Tn, Group::Fp, Group::Fn].iter().enumerate() {
            match report.get(*group) {
                Some(s) => {
                    assert_eq!(s.trusts.len(), counts[i]);
                    assert!((s.nts - sums[i] / counts[i] as f64).abs() < 1e-12);
                    assert!(s.nts >= 0.0 && s.nts <= 1.0);
                }
                None => assert_eq!(counts[i], 0),
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let preds: Vec<Prediction> = (0..37)
            .map(|i| pred(Label::Class1, 0.5 + 0.5 * (i as f64 / 37.0)))
            .collect();
        let report = trust_spectrum(&preds).unwrap();
        for s in report.groups() {
            let integral: f64 = s.density.iter().sum::<f64>() / TRUST_BINS as f64;
            assert!((integral - 1.0).abs() < 1e-9, "{integral}");
        }
    }
}
