use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::FormatError;
use crate::model::*;

type Result<T> = std::result::Result<T, FormatError>;

/// Parses a request document: `{"subject": {"role": {"type": "string",
/// "value": "nurse"}}, ...}`. Missing categories are empty; an empty input is
/// the empty request.
pub fn parse_request(bytes: &[u8]) -> Result<Request> {
    let text = std::str::from_utf8(bytes).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
    if text.trim().is_empty() {
        return Ok(Request::new());
    }
    let doc: Value =
        serde_json::from_str(text).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
    request_from_value(&doc)
}

pub(crate) fn request_from_value(doc: &Value) -> Result<Request> {
    let sections = doc
        .as_object()
        .ok_or_else(|| FormatError::MalformedDocument("request must be an object".into()))?;
    let mut req = Request::new();
    for (key, section) in sections {
        let category =
            AttributeCategory::from_key(key).ok_or_else(|| FormatError::UnknownCategory(key.clone()))?;
        let entries = section.as_object().ok_or_else(|| {
            FormatError::MalformedDocument(format!("category {key} must be an object"))
        })?;
        for (id, entry) in entries {
            req.set(category, id, entry_values(id, entry)?);
        }
    }
    Ok(req)
}

fn entry_values(id: &str, entry: &Value) -> Result<Vec<AttributeValue>> {
    let bad = || FormatError::BadValueLiteral(id.to_string());
    let type_name = entry.get("type").and_then(Value::as_str).ok_or_else(bad)?;
    let data_type = ValueType::from_name(type_name).ok_or_else(bad)?;
    let raw = entry.get("value").ok_or_else(bad)?;
    let items: Vec<&Value> = match raw {
        Value::Array(xs) => xs.iter().collect(),
        scalar => vec![scalar],
    };
    items
        .into_iter()
        .map(|v| {
            let text = match (data_type, v) {
                (ValueType::Boolean, Value::Bool(b)) => b.to_string(),
                (ValueType::Integer, Value::Number(n)) => n.as_i64().ok_or_else(bad)?.to_string(),
                (_, Value::String(s)) => s.clone(),
                _ => return Err(bad()),
            };
            AttributeValue::parse(data_type, &text).ok_or_else(bad)
        })
        .collect()
}

fn value_json(v: &AttributeValue) -> Value {
    match v {
        AttributeValue::Integer(i) => Value::from(*i),
        AttributeValue::Boolean(b) => Value::from(*b),
        other => Value::from(other.lexical()),
    }
}

pub(crate) fn request_to_value(req: &Request) -> Value {
    let mut doc = Map::new();
    for category in AttributeCategory::ALL {
        let mut section = Map::new();
        for (id, values) in req.bag(category) {
            let Some(first) = values.first() else { continue };
            let value = match values.as_slice() {
                [single] => value_json(single),
                many => Value::Array(many.iter().map(value_json).collect()),
            };
            let mut entry = Map::new();
            entry.insert("type".into(), Value::from(first.value_type().key()));
            entry.insert("value".into(), value);
            section.insert(id.clone(), Value::Object(entry));
        }
        doc.insert(category.key().into(), Value::Object(section));
    }
    Value::Object(doc)
}

pub fn serialize_request(req: &Request) -> String {
    serde_json::to_string_pretty(&request_to_value(req)).expect("JSON values always serialize")
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ObligationDoc {
    oid: String,
    fulfill_on: String,
    aid: String,
    data_type: String,
    action: String,
}

#[derive(Serialize, Deserialize)]
struct ResponseDoc {
    decision: String,
    obligations: Vec<ObligationDoc>,
}

/// `{"decision": ..., "obligations": [...]}`; an attribute request carries
/// the empty decision `""`.
pub fn serialize_response(resp: &Response) -> String {
    let doc = ResponseDoc {
        decision: resp.decision.map(|d| d.name().to_string()).unwrap_or_default(),
        obligations: resp
            .obligations
            .iter()
            .map(|o| ObligationDoc {
                oid: o.id.clone(),
                fulfill_on: o.fulfill_on.name().into(),
                aid: o.attribute_id.clone(),
                data_type: o.data_type.name().into(),
                action: o.action.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("response always serializes")
}

pub fn parse_response(bytes: &[u8]) -> Result<Response> {
    let doc: ResponseDoc =
        serde_json::from_slice(bytes).map_err(|e| FormatError::MalformedDocument(e.to_string()))?;
    let decision = match doc.decision.as_str() {
        "" => None,
        name => Some(
            Decision::from_name(name)
                .ok_or_else(|| FormatError::MalformedDocument(format!("unknown decision {name:?}")))?,
        ),
    };
    let obligations = doc
        .obligations
        .into_iter()
        .map(|o| {
            Ok(Obligation {
                fulfill_on: Effect::from_name(&o.fulfill_on)
                    .ok_or_else(|| FormatError::MalformedDocument(format!("bad fulfillOn {:?}", o.fulfill_on)))?,
                data_type: ValueType::from_name(&o.data_type)
                    .ok_or_else(|| FormatError::MalformedDocument(format!("bad dataType {:?}", o.data_type)))?,
                id: o.oid,
                attribute_id: o.aid,
                action: o.action,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Response {
        decision,
        obligations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::*;

    const NURSE: &str = r#"{
      "subject": {"role": {"type": "string", "value": "nurse"}},
      "action": {"action-id": {"type": "string", "value": "read"}},
      "resource": {
        "resource-type": {"type": "string", "value": "patients' record"},
        "age": {"type": "integer", "value": 55},
        "address": {"type": "string", "value": "Ho Chi Minh"},
        "disease": {"type": "string", "value": "Hypertension"}
      },
      "environment": {
        "current-time": {"type": "time", "value": "8:00 AM"},
        "current-place": {"type": "string", "value": "patients' room"}
      }
    }"#;

    #[test]
    fn nurse_request_parses() {
        let req = parse_request(NURSE.as_bytes()).unwrap();
        assert_eq!(req, nurse_request());
        let t = req.get(AttributeCategory::Environment, CURRENT_TIME).unwrap();
        assert_eq!(t, [AttributeValue::Time(TimeOfDay::from_seconds(28_800).unwrap())]);
        assert_eq!(parse_request(serialize_request(&req).as_bytes()).unwrap(), req);
    }

    #[test]
    fn empty_documents_are_empty_requests() {
        assert!(parse_request(b"").unwrap().is_empty());
        assert!(parse_request(b"{}").unwrap().is_empty());
    }

    #[test]
    fn request_errors() {
        assert_eq!(
            parse_request(br#"{"weather": {}}"#).unwrap_err(),
            FormatError::UnknownCategory("weather".into())
        );
        assert_eq!(
            parse_request(br#"{"resource": {"age": {"type": "integer", "value": "old"}}}"#).unwrap_err(),
            FormatError::BadValueLiteral("age".into())
        );
        assert!(matches!(
            parse_request(b"{").unwrap_err(),
            FormatError::MalformedDocument(_)
        ));
    }

    #[test]
    fn multi_valued_bags_round_trip() {
        let req = Request::new()
            .with(AttributeCategory::Subject, "group", AttributeValue::string("a"))
            .with(AttributeCategory::Subject, "group", AttributeValue::string("b"));
        let text = serialize_request(&req);
        assert!(text.contains("\"a\""), "{text}");
        assert_eq!(parse_request(text.as_bytes()).unwrap(), req);
    }

    #[test]
    fn responses() {
        assert_eq!(
            serialize_response(&Response::bare(Decision::Permit)),
            r#"{"decision":"Permit","obligations":[]}"#
        );
        assert_eq!(
            serialize_response(&Response::bare(Decision::NotApplicable)),
            r#"{"decision":"NotApplicable","obligations":[]}"#
        );
        let ask = Response::attribute_request(vec![Obligation {
            id: "Os1".into(),
            fulfill_on: Effect::Deny,
            attribute_id: DEPARTMENT.into(),
            data_type: ValueType::String,
            action: "getString".into(),
        }]);
        let text = serialize_response(&ask);
        assert_eq!(
            text,
            r#"{"decision":"","obligations":[{"oid":"Os1","fulfillOn":"Deny","aid":"Department","dataType":"String","action":"getString"}]}"#
        );
        assert_eq!(parse_response(text.as_bytes()).unwrap(), ask);
    }
}
