use std::collections::BTreeMap;
use std::time::Duration;

use chrono::NaiveDate;

use crate::model::*;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Overrides [`DEFAULT_TIMEOUT`], in milliseconds.
pub const TIMEOUT_ENV: &str = "DYPOL_OBLIGATION_TIMEOUT_MS";

/// What the requester answered to an attribute obligation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObligationOutcome {
    /// Values keyed by attribute id.
    Provided(BTreeMap<String, AttributeValue>),
    Refused,
    TimedOut,
}

/// Delivers obligations to the requester behind a session and waits for the
/// answer, giving up after `timeout`.
pub trait ObligationService {
    fn fulfil(&mut self, session: &str, obligations: &[Obligation], timeout: Duration) -> ObligationOutcome;
}

/// Answers from a fixed table; any attribute it does not know times out.
#[derive(Debug, Clone, Default)]
pub struct StaticService {
    pub values: BTreeMap<String, AttributeValue>,
    pub refuse: bool,
}

impl StaticService {
    pub fn providing(values: impl IntoIterator<Item = (String, AttributeValue)>) -> Self {
        StaticService {
            values: values.into_iter().collect(),
            refuse: false,
        }
    }

    pub fn refusing() -> Self {
        StaticService {
            values: BTreeMap::new(),
            refuse: true,
        }
    }
}

impl ObligationService for StaticService {
    fn fulfil(&mut self, _: &str, obligations: &[Obligation], _: Duration) -> ObligationOutcome {
        if self.refuse {
            return ObligationOutcome::Refused;
        }
        let mut out = BTreeMap::new();
        for o in obligations {
            match self.values.get(&o.attribute_id) {
                Some(v) => {
                    out.insert(o.attribute_id.clone(), v.clone());
                }
                None => return ObligationOutcome::TimedOut,
            }
        }
        ObligationOutcome::Provided(out)
    }
}

/// Always answers with a fixed value per data type.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoFulfill;

impl AutoFulfill {
    pub fn value_for(t: ValueType) -> AttributeValue {
        match t {
            ValueType::String => AttributeValue::string("auto"),
            ValueType::Integer => AttributeValue::Integer(0),
            ValueType::Boolean => AttributeValue::Boolean(false),
            ValueType::Time => AttributeValue::Time(TimeOfDay::hm(12, 0).expect("noon")),
            ValueType::Date => AttributeValue::Date(NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")),
        }
    }
}

impl ObligationService for AutoFulfill {
    fn fulfil(&mut self, _: &str, obligations: &[Obligation], _: Duration) -> ObligationOutcome {
        ObligationOutcome::Provided(
            obligations
                .iter()
                .map(|o| (o.attribute_id.clone(), Self::value_for(o.data_type)))
                .collect(),
        )
    }
}

/// Adapts a closure.
pub struct FnService<F>(pub F);

impl<F> ObligationService for FnService<F>
where
    F: FnMut(&str, &[Obligation], Duration) -> ObligationOutcome,
{
    fn fulfil(&mut self, session: &str, obligations: &[Obligation], timeout: Duration) -> ObligationOutcome {
        (self.0)(session, obligations, timeout)
    }
}

/// [`DEFAULT_TIMEOUT`] unless the environment overrides it.
pub fn configured_timeout() -> Duration {
    std::env::var(TIMEOUT_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .map(Duration::from_millis)
        .unwrap_or(DEFAULT_TIMEOUT)
}
