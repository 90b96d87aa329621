//! Post-event survey: Likert answers per question, bucketed into
//! negative (1, 2), neutral (3) and positive (4, 5) shares per cohort.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    DefensiveOffensive,
    Defensive,
    Academia,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::DefensiveOffensive, Cohort::Defensive, Cohort::Academia];

    pub fn label(self) -> &'static str {
        match self {
            Cohort::DefensiveOffensive => "D/O",
            Cohort::Defensive => "D",
            Cohort::Academia => "A",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QuestionId {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
}

impl QuestionId {
    pub const ALL: [QuestionId; 6] = [
        QuestionId::Q1,
        QuestionId::Q2,
        QuestionId::Q3,
        QuestionId::Q4,
        QuestionId::Q5,
        QuestionId::Q6,
    ];
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A 5-point agreement answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Likert(u8);

impl Likert {
    pub fn new(value: u8) -> Result<Self, SurveyError> {
        if (1..=5).contains(&value) {
            Ok(Likert(value))
        } else {
            Err(SurveyError::AnswerOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    fn bucket(self) -> usize {
        match self.0 {
            1 | 2 => 0,
            3 => 1,
            _ => 2,
        }
    }
}

impl TryFrom<u8> for Likert {
    type Error = SurveyError;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Likert::new(value)
    }
}

impl From<Likert> for u8 {
    fn from(l: Likert) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub respondent: String,
    pub question_id: QuestionId,
    pub answer: Likert,
    pub cohort: Cohort,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurveyError {
    #[error("answer {0} is outside 1..=5")]
    AnswerOutOfRange(u8),
    #[error("respondent {respondent} answered {question} more than once")]
    DuplicateAnswer { respondent: String, question: QuestionId },
    #[error("respondent {0} reported more than one cohort")]
    MixedCohort(String),
    #[error("respondent token must not be empty")]
    EmptyRespondent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Floors to 0.1 and hands the leftover tenths to the largest
    /// remainders, so every row sums to exactly 100.0.
    #[default]
    LargestRemainder,
    /// Each share rounded independently; rows may sum to 99.9 or 100.1.
    HalfUp,
}

/// Shares in tenths of a percent, in negative, neutral, positive order.
pub fn shares_in_tenths(counts: [u32; 3], rounding: Rounding) -> Option<[u32; 3]> {
    let n: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if n == 0 {
        return None;
    }
    let scaled = counts.map(|c| 1000 * u64::from(c));
    let tenths = match rounding {
        Rounding::HalfUp => scaled.map(|s| (2 * s + n) / (2 * n)),
        Rounding::LargestRemainder => {
            let mut out = scaled.map(|s| s / n);
            let leftover = 1000 - out.iter().sum::<u64>();
            let mut order = [0usize, 1, 2];
            order.sort_by_key(|&i| std::cmp::Reverse((scaled[i] % n, counts[i], i)));
            for &i in order.iter().take(leftover as usize) {
                out[i] += 1;
            }
            out
        }
    };
    Some(tenths.map(|t| t as u32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shares {
    pub neg_pct: f64,
    pub neutral_pct: f64,
    pub pos_pct: f64,
}

impl Shares {
    fn from_tenths(t: [u32; 3]) -> Self {
        let pct = |v: u32| f64::from(v) / 10.0;
        Shares {
            neg_pct: pct(t[0]),
            neutral_pct: pct(t[1]),
            pos_pct: pct(t[2]),
        }
    }

    pub fn sum(&self) -> f64 {
        self.neg_pct + self.neutral_pct + self.pos_pct
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub question: QuestionId,
    pub cohort: Cohort,
    pub n: u32,
    /// Negative, neutral, positive answer counts.
    pub counts: [u32; 3],
    /// `None` when nobody in the cohort answered.
    pub shares: Option<Shares>,
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyAggregate {
    pub rounding: Rounding,
    /// Every question for every cohort, in question then cohort order.
    pub cells: Vec<CellAggregate>,
}

impl SurveyAggregate {
    pub fn cell(&self, question: QuestionId, cohort: Cohort) -> &CellAggregate {
        self.cells
            .iter()
            .find(|c| c.question == question && c.cohort == cohort)
            .expect("aggregate has every cell")
    }

    /// Plain-text table with one row per question.
    pub fn render_table(&self) -> String {
        let mut out = String::from("    ");
        for cohort in Cohort::ALL {
            out.push_str(&format!("| {:^22} ", format!("{} (-/N/+)", cohort.label())));
        }
        out.push('\n');
        for q in QuestionId::ALL {
            out.push_str(&format!("{q:<4}"));
            for cohort in Cohort::ALL {
                let cell = self.cell(q, cohort);
                let text = match cell.shares {
                    Some(s) => format!(
                        "{:.1}/{:.1}/{:.1} n={}",
                        s.neg_pct, s.neutral_pct, s.pos_pct, cell.n
                    ),
                    None => "undefined n=0".to_string(),
                };
                out.push_str(&format!("| {text:^22} "));
            }
            out.push('\n');
        }
        out
    }
}

/// One answer per (respondent, question), one cohort per respondent.
pub fn validate_responses(responses: &[SurveyResponse]) -> Result<(), SurveyError> {
    let mut seen = BTreeSet::new();
    let mut cohorts: BTreeMap<&str, Cohort> = BTreeMap::new();
    for r in responses {
        if r.respondent.is_empty() {
            return Err(SurveyError::EmptyRespondent);
        }
        if !seen.insert((r.respondent.as_str(), r.question_id)) {
            return Err(SurveyError::DuplicateAnswer {
                respondent: r.respondent.clone(),
                question: r.question_id,
            });
        }
        if *cohorts.entry(&r.respondent).or_insert(r.cohort) != r.cohort {
            return Err(SurveyError::MixedCohort(r.respondent.clone()));
        }
    }
    Ok(())
}

pub fn aggregate(responses: &[SurveyResponse], rounding: Rounding) -> Result<SurveyAggregate, SurveyError> {
    validate_responses(responses)?;
    let mut counts: BTreeMap<(QuestionId, Cohort), [u32; 3]> = BTreeMap::new();
    for r in responses {
        counts.entry((r.question_id, r.cohort)).or_default()[r.answer.bucket()] += 1;
    }
    let cells = QuestionId::ALL
        .into_iter()
        .flat_map(|q| Cohort::ALL.map(|c| (q, c)))
        .map(|(question, cohort)| {
            let counts = counts.get(&(question, cohort)).copied().unwrap_or_default();
            let shares = shares_in_tenths(counts, rounding).map(Shares::from_tenths);
            CellAggregate {
                question,
                cohort,
                n: counts.iter().sum(),
                counts,
                undefined: shares.is_none(),
                shares,
            }
        })
        .collect();
    Ok(SurveyAggregate { rounding, cells })
}

/// Builds responses with the given (negative, neutral, positive) counts.
/// Negative answers are 2, neutral 3 and positive 4; respondents are named
/// `{prefix}-{i}`.
pub fn synthesize(
    prefix: &str,
    question: QuestionId,
    cohort: Cohort,
    counts: [u32; 3],
) -> Vec<SurveyResponse> {
    let answers = [2u8, 3, 4];
    let mut out = Vec::new();
    for (bucket, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            out.push(SurveyResponse {
                respondent: format!("{prefix}-{}", out.len()),
                question_id: question,
                answer: Likert(answers[bucket]),
                cohort,
            });
        }
    }
    out
}
