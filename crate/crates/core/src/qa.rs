//! Question banks and the QA score used by every judge-scored dimension.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifacts::{Frame, VideoCase, ROTATION_TAG};
use crate::gateway::{Gateway, GatewayError, QARequest, Verdict};

#[derive(Debug, Error)]
pub enum QaError {
    #[error("empty answer list")]
    NoAnswers,
    #[error("question bank for {dimension_id} has no entry for case {case_id}")]
    MissingCase { dimension_id: String, case_id: String },
    #[error("invalid question bank: {0}")]
    InvalidBank(String),
    #[error("case {case_id} is not tagged {ROTATION_TAG}")]
    NotRotationCase { case_id: String },
    #[error("question bank for {0} is not a rotation bank")]
    NotRotationBank(String),
    #[error("judge failed on case {case_id}: {source}")]
    Gateway {
        case_id: String,
        #[source]
        source: GatewayError,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankSetting {
    #[default]
    Standard,
    /// Turntable views (front, profile, back) of the character.
    Rotation360,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    /// Reserved; only 1 is accepted.
    #[serde(default = "unit_weight", skip_serializing_if = "is_unit")]
    pub weight: f64,
}

fn is_unit(w: &f64) -> bool {
    *w == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankCase {
    pub case_id: String,
    /// Appearance, behavior and personality description of the character.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub questions: Vec<Question>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub dimension_id: String,
    #[serde(default)]
    pub setting: BankSetting,
    /// Natural-language description of the dimension for the judge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    pub cases: Vec<BankCase>,
}

impl QuestionBank {
    pub fn from_json(text: &str) -> Result<Self, QaError> {
        let bank: Self = serde_json::from_str(text).map_err(|e| QaError::InvalidBank(e.to_string()))?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, QaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| QaError::InvalidBank(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            QaError::InvalidBank(msg) => QaError::InvalidBank(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), QaError> {
        let mut seen_cases = HashSet::new();
        for case in &self.cases {
            if !seen_cases.insert(case.case_id.as_str()) {
                return Err(QaError::InvalidBank(format!("duplicate case_id {}", case.case_id)));
            }
            if case.questions.is_empty() {
                return Err(QaError::InvalidBank(format!("case {} has no questions", case.case_id)));
            }
            let mut seen = HashSet::new();
            for q in &case.questions {
                if !seen.insert(q.id.as_str()) {
                    return Err(QaError::InvalidBank(format!(
                        "duplicate question id {} in case {}",
                        q.id, case.case_id
                    )));
                }
                if q.text.trim().is_empty() {
                    return Err(QaError::InvalidBank(format!("question {} has empty text", q.id)));
                }
                if q.weight != 1.0 {
                    return Err(QaError::InvalidBank(format!(
                        "question {} has weight {}; only 1 is supported",
                        q.id, q.weight
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, case_id: &str) -> Option<&BankCase> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    fn system_context(&self, entry: &BankCase) -> String {
        let mut ctx = self.context.clone().unwrap_or_else(|| {
            format!(
                "You are judging a generated character-animation video for the dimension \"{}\". \
                 Answer strictly from what is visible in the frames.",
                self.dimension_id
            )
        });
        if let Some(profile) = &entry.profile {
            ctx.push_str("\n\nCharacter profile:\n");
            ctx.push_str(profile);
        }
        ctx
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub question_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionCaseScore {
    pub case_id: String,
    pub dimension_id: String,
    pub score: f64,
    pub verdicts: Vec<QuestionVerdict>,
    pub unparseable_count: usize,
}

/// `100/K · Σ a_k` with yes → 1 and no/unparseable → 0.
pub fn score_qa(answers: &[Verdict]) -> Result<f64, QaError> {
    if answers.is_empty() {
        return Err(QaError::NoAnswers);
    }
    let yes: u64 = answers.iter().map(|v| v.as_point() as u64).sum();
    // Single rounding step from the exact rational 100·yes/K.
    Ok((100 * yes) as f64 / answers.len() as f64)
}

/// Asks every question of the case's bank entry and aggregates the verdicts.
pub fn evaluate_case(
    bank: &QuestionBank,
    case: &VideoCase,
    frames: &[Frame],
    gateway: &Gateway,
) -> Result<DimensionCaseScore, QaError> {
    let entry = bank.entry(&case.case_id).ok_or_else(|| QaError::MissingCase {
        dimension_id: bank.dimension_id.clone(),
        case_id: case.case_id.clone(),
    })?;
    let system_context = bank.system_context(entry);

    // Sequential on purpose: one case's questions share the cache in order.
    let mut verdicts = Vec::with_capacity(entry.questions.len());
    for q in &entry.questions {
        let answer = gateway
            .ask_yes_no(&QARequest {
                case_id: case.case_id.clone(),
                system_context: system_context.clone(),
                question: q.text.clone(),
                frames: frames.to_vec(),
            })
            .map_err(|source| QaError::Gateway {
                case_id: case.case_id.clone(),
                source,
            })?;
        verdicts.push(QuestionVerdict {
            question_id: q.id.clone(),
            verdict: answer.verdict,
        });
    }
    let raw: Vec<Verdict> = verdicts.iter().map(|v| v.verdict).collect();
    Ok(DimensionCaseScore {
        case_id: case.case_id.clone(),
        dimension_id: bank.dimension_id.clone(),
        score: score_qa(&raw)?,
        unparseable_count: raw.iter().filter(|v| **v == Verdict::Unparseable).count(),
        verdicts,
    })
}

/// Appearance under the 360° turntable setting. Same mechanics as
/// [`evaluate_case`]; requires the rotation tag on both case and bank.
pub fn evaluate_ip_rotation(
    bank: &QuestionBank,
    case: &VideoCase,
    frames: &[Frame],
    gateway: &Gateway,
) -> Result<DimensionCaseScore, QaError> {
    if !case.tags.contains(ROTATION_TAG) {
        return Err(QaError::NotRotationCase {
            case_id: case.case_id.clone(),
        });
    }
    if bank.setting != BankSetting::Rotation360 {
        return Err(QaError::NotRotationBank(bank.dimension_id.clone()));
    }
    evaluate_case(bank, case, frames, gateway)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubBackend;
    use approx::assert_abs_diff_eq;

    fn bank(k: usize, setting: BankSetting) -> QuestionBank {
        QuestionBank {
            dimension_id: "appearance".into(),
            setting,
            context: None,
            cases: vec![BankCase {
                case_id: "c1".into(),
                profile: Some("A small fox with a large round head.".into()),
                questions: (0..k)
                    .map(|i| Question {
                        id: format!("q{i}"),
                        text: format!("Question {i}?"),
                        weight: 1.0,
                    })
                    .collect(),
            }],
        }
    }

    fn case(id: &str) -> VideoCase {
        VideoCase {
            case_id: id.into(),
            dimension_id: "appearance".into(),
            source_image: Default::default(),
            prompt: "fox jumps".into(),
            expected_label: None,
            question_bank_ref: None,
            artifact_needs: Default::default(),
            tags: Default::default(),
        }
    }

    fn frames() -> Vec<Frame> {
        vec![Frame::new("0.png", vec![0])]
    }

    const YES: &str = r#"{"answer":"yes"}"#;
    const NO: &str = r#"{"answer":"no"}"#;

    #[test]
    fn score_examples() {
        use Verdict::*;
        assert_abs_diff_eq!(score_qa(&[Yes, Yes, No]).unwrap(), 66.6667, epsilon = 1e-4);
        for k in 1..20 {
            assert_eq!(score_qa(&vec![Yes; k]).unwrap(), 100.0);
        }
        assert_eq!(score_qa(&[Unparseable, Yes]).unwrap(), 50.0);
        assert!(matches!(score_qa(&[]), Err(QaError::NoAnswers)));
    }

    #[test]
    fn all_yes_case() {
        let gw = Gateway::stub(StubBackend::fixed(YES));
        let s = evaluate_case(&bank(5, BankSetting::Standard), &case("c1"), &frames(), &gw).unwrap();
        assert_eq!(s.score, 100.0);
        assert_eq!(s.verdicts.len(), 5);
        assert_eq!(s.unparseable_count, 0);
    }

    #[test]
    fn alternating_case() {
        let gw = Gateway::stub(StubBackend::sequence([YES, NO, YES, NO]));
        let s = evaluate_case(&bank(4, BankSetting::Standard), &case("c1"), &frames(), &gw).unwrap();
        assert_eq!(s.score, 50.0);
    }

    #[test]
    fn missing_entry_names_case() {
        let gw = Gateway::stub(StubBackend::fixed(YES));
        let err = evaluate_case(&bank(1, BankSetting::Standard), &case("nope"), &frames(), &gw).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn gateway_failure_is_case_error() {
        let gw = Gateway::stub(StubBackend::sequence(Vec::<String>::new()));
        assert!(matches!(
            evaluate_case(&bank(1, BankSetting::Standard), &case("c1"), &frames(), &gw),
            Err(QaError::Gateway { .. })
        ));
    }

    #[test]
    fn rotation_setting() {
        let mut c = case("c1");
        c.tags.insert(ROTATION_TAG.into());
        let b = bank(3, BankSetting::Rotation360);

        let gw = Gateway::stub(StubBackend::fixed(YES));
        assert_eq!(evaluate_ip_rotation(&b, &c, &frames(), &gw).unwrap().score, 100.0);

        let gw = Gateway::stub(StubBackend::sequence([YES, YES, NO]));
        let s = evaluate_ip_rotation(&b, &c, &frames(), &gw).unwrap();
        assert_abs_diff_eq!(s.score, 66.6667, epsilon = 1e-4);

        let gw = Gateway::stub(StubBackend::fixed(YES));
        assert!(matches!(
            evaluate_ip_rotation(&b, &case("c1"), &frames(), &gw),
            Err(QaError::NotRotationCase { .. })
        ));
        assert!(matches!(
            evaluate_ip_rotation(&bank(3, BankSetting::Standard), &c, &frames(), &gw),
            Err(QaError::NotRotationBank(_))
        ));
    }

    #[test]
    fn bank_schema() {
        let b = QuestionBank::from_json(
            r#"{"dimension_id":"behavior","cases":[{"case_id":"a","questions":[{"id":"1","text":"Does it wave?"}]}]}"#,
        )
        .unwrap();
        assert_eq!(b.setting, BankSetting::Standard);
        assert!(QuestionBank::from_json(
            r#"{"dimension_id":"x","cases":[{"case_id":"a","questions":[{"id":"1","text":"a"},{"id":"1","text":"b"}]}]}"#
        )
        .is_err());
        assert!(QuestionBank::from_json(r#"{"dimension_id":"x","cases":[{"case_id":"a","questions":[]}]}"#).is_err());
        assert!(QuestionBank::from_json(
            r#"{"dimension_id":"x","cases":[{"case_id":"a","questions":[{"id":"1","text":"a","weight":2}]}]}"#
        )
        .is_err());
    }

    #[test]
    fn profile_reaches_judge() {
        let stub = std::sync::Arc::new(StubBackend::script(crate::gateway::StubScript {
            rules: vec![],
            default: Some(YES.into()),
        }));
        let gw = Gateway::stub_shared(stub);
        let b = bank(1, BankSetting::Standard);
        let ctx = b.system_context(&b.cases[0]);
        assert!(ctx.contains("large round head"));
        evaluate_case(&b, &case("c1"), &frames(), &gw).unwrap();
    }
}
