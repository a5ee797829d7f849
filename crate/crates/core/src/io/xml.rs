use std::collections::BTreeSet;
use std::fmt::Write as _;

use roxmltree::{Document, Node};

use super::{FormatError, Pos};
use crate::model::*;

const NS: &str = "urn:oasis:names:tc:xacml:3.0:core:schema:wd-17";
const FUNCTION_PREFIX: &str = "urn:oasis:names:tc:xacml:1.0:function:";
const TYPE_PREFIX: &str = "http://www.w3.org/2001/XMLSchema#";

/// A parsed policy file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDocument {
    pub root: PolicyNode,
    pub source_name: String,
    pub byte_length: usize,
}

type Result<T> = std::result::Result<T, FormatError>;

struct Reader<'a, 'input> {
    doc: &'a Document<'input>,
}

fn open(bytes: &[u8]) -> Result<Document<'_>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        FormatError::MalformedXml(Pos::default(), format!("invalid UTF-8: {e}"))
    })?;
    Document::parse(text).map_err(|e| {
        let p = e.pos();
        FormatError::MalformedXml(
            Pos {
                line: p.row,
                col: p.col,
            },
            e.to_string(),
        )
    })
}

/// Parses a `<Policy>` or `<PolicySet>` document and validates the tree.
pub fn parse_policy(bytes: &[u8]) -> Result<PolicyDocument> {
    parse_policy_named(bytes, "<memory>")
}

pub fn parse_policy_named(bytes: &[u8], source_name: &str) -> Result<PolicyDocument> {
    let root = parse_policy_fragment(bytes)?;
    Ok(PolicyDocument {
        root,
        source_name: source_name.to_string(),
        byte_length: bytes.len(),
    })
}

/// Parses a policy tree without the document wrapper.
pub fn parse_policy_fragment(bytes: &[u8]) -> Result<PolicyNode> {
    let doc = open(bytes)?;
    let r = Reader { doc: &doc };
    let root = doc.root_element();
    let node = match root.tag_name().name() {
        "Policy" | "PolicySet" => r.node(root)?,
        other => return Err(r.unsupported(root, other)),
    };
    check(&node)?;
    Ok(node)
}

/// Parses a standalone `<Rule>` element.
pub fn parse_rule(bytes: &[u8]) -> Result<Rule> {
    let doc = open(bytes)?;
    let r = Reader { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "Rule" {
        return Err(r.unsupported(root, root.tag_name().name()));
    }
    let rule = r.rule(root)?;
    check(&wrap_rule(rule.clone()))?;
    Ok(rule)
}

/// Parses a standalone `<Condition>` element.
pub fn parse_condition(bytes: &[u8]) -> Result<Condition> {
    let doc = open(bytes)?;
    let r = Reader { doc: &doc };
    let root = doc.root_element();
    if root.tag_name().name() != "Condition" {
        return Err(r.unsupported(root, root.tag_name().name()));
    }
    let c = r.condition(root, "Condition")?;
    check(&wrap_rule(Rule::new("condition", Effect::Deny).with_condition(c.clone())))?;
    Ok(c)
}

fn wrap_rule(rule: Rule) -> PolicyNode {
    PolicyNode::Policy(Policy {
        id: format!("{}.policy", rule.id),
        rules: vec![rule],
        algorithm: CombiningAlgorithm::DenyOverrides,
        target: Target::any(),
        obligations: vec![],
    })
}

fn check(node: &PolicyNode) -> Result<()> {
    match validate(node).into_iter().next() {
        None => Ok(()),
        Some(v) if v.message.starts_with("type mismatch") => Err(FormatError::TypeMismatch(v.element)),
        Some(v) => Err(FormatError::Invalid {
            element: v.element,
            message: v.message,
        }),
    }
}

fn elements<'a, 'i>(n: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    n.children().filter(|c| c.is_element())
}

impl<'a, 'input> Reader<'a, 'input> {
    fn pos(&self, n: Node) -> Pos {
        let p = self.doc.text_pos_at(n.range().start);
        Pos {
            line: p.row,
            col: p.col,
        }
    }

    fn unsupported(&self, n: Node, name: &str) -> FormatError {
        FormatError::UnsupportedElement {
            name: name.to_string(),
            at: self.pos(n),
        }
    }

    fn attr(&self, n: Node<'a, 'input>, name: &str) -> Result<&'a str> {
        n.attribute(name).ok_or_else(|| FormatError::MissingAttribute {
            element: n.tag_name().name().to_string(),
            attribute: name.to_string(),
            at: self.pos(n),
        })
    }

    fn algorithm(&self, n: Node<'a, 'input>, attribute: &str, policy_level: bool) -> Result<CombiningAlgorithm> {
        let uri = self.attr(n, attribute)?;
        match CombiningAlgorithm::from_name(uri) {
            Some(CombiningAlgorithm::OnlyOneApplicable) if !policy_level => {
                Err(FormatError::UnknownAlgorithmUri {
                    uri: uri.to_string(),
                    at: self.pos(n),
                })
            }
            Some(alg) => Ok(alg),
            None => Err(FormatError::UnknownAlgorithmUri {
                uri: uri.to_string(),
                at: self.pos(n),
            }),
        }
    }

    fn node(&self, n: Node<'a, 'input>) -> Result<PolicyNode> {
        if n.tag_name().name() == "Policy" {
            return Ok(PolicyNode::Policy(self.policy(n)?));
        }
        let mut set = PolicySet {
            id: self.attr(n, "PolicySetId")?.to_string(),
            children: vec![],
            algorithm: self.algorithm(n, "PolicyCombiningAlgId", true)?,
            target: Target::any(),
            obligations: vec![],
        };
        for c in elements(n) {
            match c.tag_name().name() {
                "Target" => set.target = self.target(c)?,
                "Policy" | "PolicySet" => set.children.push(self.node(c)?),
                "ObligationExpressions" => set.obligations = self.obligations(c)?,
                other => return Err(self.unsupported(c, other)),
            }
        }
        Ok(PolicyNode::PolicySet(set))
    }

    fn policy(&self, n: Node<'a, 'input>) -> Result<Policy> {
        let mut policy = Policy {
            id: self.attr(n, "PolicyId")?.to_string(),
            rules: vec![],
            algorithm: self.algorithm(n, "RuleCombiningAlgId", false)?,
            target: Target::any(),
            obligations: vec![],
        };
        for c in elements(n) {
            match c.tag_name().name() {
                "Target" => policy.target = self.target(c)?,
                "Rule" => policy.rules.push(self.rule(c)?),
                "ObligationExpressions" => policy.obligations = self.obligations(c)?,
                other => return Err(self.unsupported(c, other)),
            }
        }
        Ok(policy)
    }

    fn rule(&self, n: Node<'a, 'input>) -> Result<Rule> {
        let id = self.attr(n, "RuleId")?;
        let effect_name = self.attr(n, "Effect")?;
        let effect = Effect::from_name(effect_name).ok_or_else(|| FormatError::Invalid {
            element: id.to_string(),
            message: format!("unknown effect {effect_name:?}"),
        })?;
        let mut rule = Rule::new(id, effect);
        for c in elements(n) {
            match c.tag_name().name() {
                "Target" => rule.target = self.target(c)?,
                "Condition" => rule.condition = self.condition(c, id)?,
                other => return Err(self.unsupported(c, other)),
            }
        }
        Ok(rule)
    }

    fn target(&self, n: Node<'a, 'input>) -> Result<Target> {
        let mut target = Target::any();
        for any in elements(n) {
            if any.tag_name().name() != "AnyOf" {
                return Err(self.unsupported(any, any.tag_name().name()));
            }
            let mut any_of = AnyOf { all_ofs: vec![] };
            for all in elements(any) {
                if all.tag_name().name() != "AllOf" {
                    return Err(self.unsupported(all, all.tag_name().name()));
                }
                let mut all_of = AllOf { matches: vec![] };
                for m in elements(all) {
                    if m.tag_name().name() != "Match" {
                        return Err(self.unsupported(m, m.tag_name().name()));
                    }
                    let function = self.function(m, "MatchId")?;
                    all_of.matches.push(self.predicate(m, function)?);
                }
                any_of.all_ofs.push(all_of);
            }
            target.any_ofs.push(any_of);
        }
        Ok(target)
    }

    fn function(&self, n: Node<'a, 'input>, attribute: &str) -> Result<MatchFunction> {
        let uri = self.attr(n, attribute)?;
        MatchFunction::from_uri(uri).ok_or_else(|| FormatError::UnknownFunctionUri {
            uri: uri.to_string(),
            at: self.pos(n),
        })
    }

    fn condition(&self, n: Node<'a, 'input>, owner: &str) -> Result<Condition> {
        let mut children = elements(n);
        match (children.next(), children.next()) {
            (Some(apply), None) if apply.tag_name().name() == "Apply" => self.apply(apply, owner),
            (None, _) => Ok(Condition::True),
            (Some(c), _) => Err(self.unsupported(c, c.tag_name().name())),
        }
    }

    fn apply(&self, n: Node<'a, 'input>, owner: &str) -> Result<Condition> {
        let uri = self.attr(n, "FunctionId")?;
        let suffix = uri.rsplit(':').next().unwrap_or(uri);
        let operands = || -> Result<Vec<Condition>> {
            elements(n)
                .map(|c| match c.tag_name().name() {
                    "Apply" => self.apply(c, owner),
                    other => Err(self.unsupported(c, other)),
                })
                .collect()
        };
        match suffix {
            "and" => {
                let xs = operands()?;
                Ok(if xs.is_empty() { Condition::True } else { Condition::And(xs) })
            }
            "or" => Ok(Condition::Or(operands()?)),
            "not" => {
                let mut xs = operands()?;
                if xs.len() != 1 {
                    return Err(FormatError::Invalid {
                        element: owner.to_string(),
                        message: "not takes exactly one operand".into(),
                    });
                }
                Ok(Condition::not(xs.remove(0)))
            }
            _ => {
                let function = self.function(n, "FunctionId")?;
                Ok(Condition::Predicate(self.predicate(n, function)?))
            }
        }
    }

    /// Designator plus literal(s), in either order. One-and-only and bag
    /// wrappers are looked through.
    fn predicate(&self, n: Node<'a, 'input>, function: MatchFunction) -> Result<Predicate> {
        let mut designator = None;
        let mut values = Vec::new();
        self.collect_operands(n, &mut designator, &mut values)?;
        let d = designator.ok_or_else(|| FormatError::MissingAttribute {
            element: n.tag_name().name().to_string(),
            attribute: "AttributeDesignator".into(),
            at: self.pos(n),
        })?;
        let attr = self.designator(d)?;
        let literal = |v: Node<'a, 'input>| -> Result<AttributeValue> {
            let t = self.data_type(v)?;
            AttributeValue::parse(t, v.text().unwrap_or(""))
                .ok_or_else(|| FormatError::BadValueLiteral(attr.id.clone()))
        };
        let operand = if function == MatchFunction::StringIsInSet {
            let mut members = BTreeSet::new();
            for v in values {
                match literal(v)? {
                    AttributeValue::String(s) => {
                        members.insert(s);
                    }
                    _ => return Err(FormatError::TypeMismatch(attr.id.clone())),
                }
            }
            Operand::StringSet(members)
        } else {
            match values.as_slice() {
                [v] => Operand::Value(literal(*v)?),
                _ => {
                    return Err(FormatError::Invalid {
                        element: attr.id.clone(),
                        message: format!("{} takes exactly one literal", function.uri_suffix()),
                    })
                }
            }
        };
        Ok(Predicate {
            attr,
            function,
            operand,
        })
    }

    fn collect_operands(
        &self,
        n: Node<'a, 'input>,
        designator: &mut Option<Node<'a, 'input>>,
        values: &mut Vec<Node<'a, 'input>>,
    ) -> Result<()> {
        for c in elements(n) {
            match c.tag_name().name() {
                "AttributeDesignator" => *designator = Some(c),
                "AttributeValue" => values.push(c),
                "Apply" => {
                    let uri = self.attr(c, "FunctionId")?;
                    if uri.ends_with("-one-and-only") || uri.ends_with("-bag") {
                        self.collect_operands(c, designator, values)?;
                    } else {
                        return Err(FormatError::UnknownFunctionUri {
                            uri: uri.to_string(),
                            at: self.pos(c),
                        });
                    }
                }
                other => return Err(self.unsupported(c, other)),
            }
        }
        Ok(())
    }

    fn data_type(&self, n: Node<'a, 'input>) -> Result<ValueType> {
        let uri = self.attr(n, "DataType")?;
        let key = uri.rsplit(['#', ':']).next().unwrap_or(uri);
        ValueType::from_name(key).ok_or_else(|| FormatError::UnknownDataType {
            uri: uri.to_string(),
            at: self.pos(n),
        })
    }

    fn designator(&self, n: Node<'a, 'input>) -> Result<AttributeRef> {
        let category = self.attr(n, "Category")?;
        let key = category.rsplit(':').next().unwrap_or(category);
        let category = match key {
            "access-subject" | "subject" => AttributeCategory::Subject,
            other => AttributeCategory::from_key(other)
                .ok_or_else(|| FormatError::UnknownCategory(category.to_string()))?,
        };
        Ok(AttributeRef::new(
            category,
            self.attr(n, "AttributeId")?,
            self.data_type(n)?,
        ))
    }

    fn obligations(&self, n: Node<'a, 'input>) -> Result<Vec<Obligation>> {
        let mut out = Vec::new();
        for o in elements(n) {
            if o.tag_name().name() != "ObligationExpression" {
                return Err(self.unsupported(o, o.tag_name().name()));
            }
            let id = self.attr(o, "ObligationId")?.to_string();
            let ff = self.attr(o, "FulfillOn")?;
            let fulfill_on = Effect::from_name(ff).ok_or_else(|| FormatError::Invalid {
                element: id.clone(),
                message: format!("unknown FulfillOn {ff:?}"),
            })?;
            let (mut aid, mut dt, mut action) = (None, None, None);
            for a in elements(o) {
                if a.tag_name().name() != "AttributeAssignmentExpression" {
                    return Err(self.unsupported(a, a.tag_name().name()));
                }
                let text = elements(a)
                    .find(|v| v.tag_name().name() == "AttributeValue")
                    .and_then(|v| v.text())
                    .unwrap_or("")
                    .trim()
                    .to_string();
                match self.attr(a, "AttributeId")? {
                    "attribute-id" => aid = Some(text),
                    "data-type" => dt = Some(text),
                    "action" => action = Some(text),
                    other => {
                        return Err(FormatError::Invalid {
                            element: id.clone(),
                            message: format!("unknown assignment {other:?}"),
                        })
                    }
                }
            }
            let missing = |what: &str| FormatError::MissingAttribute {
                element: "ObligationExpression".into(),
                attribute: what.into(),
                at: self.pos(o),
            };
            let dt = dt.ok_or_else(|| missing("data-type"))?;
            out.push(Obligation {
                data_type: ValueType::from_name(&dt).ok_or_else(|| FormatError::UnknownDataType {
                    uri: dt.clone(),
                    at: self.pos(o),
                })?,
                attribute_id: aid.ok_or_else(|| missing("attribute-id"))?,
                action: action.ok_or_else(|| missing("action"))?,
                id,
                fulfill_on,
            });
        }
        Ok(out)
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn category_uri(c: AttributeCategory) -> String {
    match c {
        AttributeCategory::Subject => {
            "urn:oasis:names:tc:xacml:1.0:subject-category:access-subject".into()
        }
        other => format!("urn:oasis:names:tc:xacml:3.0:attribute-category:{}", other.key()),
    }
}

struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, depth: usize, text: &str) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn value(&mut self, depth: usize, v: &AttributeValue) {
        self.line(
            depth,
            &format!(
                "<AttributeValue DataType=\"{TYPE_PREFIX}{}\">{}</AttributeValue>",
                v.value_type().key(),
                escape(&v.lexical())
            ),
        );
    }

    fn designator(&mut self, depth: usize, a: &AttributeRef) {
        self.line(
            depth,
            &format!(
                "<AttributeDesignator Category=\"{}\" AttributeId=\"{}\" DataType=\"{TYPE_PREFIX}{}\" MustBePresent=\"false\"/>",
                category_uri(a.category),
                escape(&a.id),
                a.data_type.key()
            ),
        );
    }

    fn literals(&mut self, depth: usize, p: &Predicate) {
        match &p.operand {
            Operand::Value(v) => self.value(depth, v),
            Operand::StringSet(members) => {
                for m in members {
                    self.value(depth, &AttributeValue::String(m.clone()));
                }
            }
        }
    }

    fn target(&mut self, depth: usize, t: &Target) {
        if t.is_empty() {
            return;
        }
        self.line(depth, "<Target>");
        for any in &t.any_ofs {
            self.line(depth + 1, "<AnyOf>");
            for all in &any.all_ofs {
                self.line(depth + 2, "<AllOf>");
                for m in &all.matches {
                    self.line(
                        depth + 3,
                        &format!("<Match MatchId=\"{FUNCTION_PREFIX}{}\">", m.function.uri_suffix()),
                    );
                    self.literals(depth + 4, m);
                    self.designator(depth + 4, &m.attr);
                    self.line(depth + 3, "</Match>");
                }
                self.line(depth + 2, "</AllOf>");
            }
            self.line(depth + 1, "</AnyOf>");
        }
        self.line(depth, "</Target>");
    }

    fn apply(&mut self, depth: usize, c: &Condition) {
        let (function, operands): (&str, &[Condition]) = match c {
            Condition::True => ("and", &[]),
            Condition::Predicate(p) => {
                self.line(
                    depth,
                    &format!("<Apply FunctionId=\"{FUNCTION_PREFIX}{}\">", p.function.uri_suffix()),
                );
                self.designator(depth + 1, &p.attr);
                self.literals(depth + 1, p);
                self.line(depth, "</Apply>");
                return;
            }
            Condition::Not(inner) => ("not", std::slice::from_ref(inner.as_ref())),
            Condition::And(xs) => ("and", xs),
            Condition::Or(xs) => ("or", xs),
        };
        if operands.is_empty() {
            self.line(depth, &format!("<Apply FunctionId=\"{FUNCTION_PREFIX}{function}\"/>"));
            return;
        }
        self.line(depth, &format!("<Apply FunctionId=\"{FUNCTION_PREFIX}{function}\">"));
        for x in operands {
            self.apply(depth + 1, x);
        }
        self.line(depth, "</Apply>");
    }

    fn condition(&mut self, depth: usize, c: &Condition) {
        if *c == Condition::True {
            return;
        }
        self.line(depth, "<Condition>");
        self.apply(depth + 1, c);
        self.line(depth, "</Condition>");
    }

    fn rule(&mut self, depth: usize, r: &Rule, ns: &str) {
        let open = format!("<Rule{ns} RuleId=\"{}\" Effect=\"{}\"", escape(&r.id), r.effect.name());
        if r.target.is_empty() && r.condition == Condition::True {
            self.line(depth, &format!("{open}/>"));
            return;
        }
        self.line(depth, &format!("{open}>"));
        self.target(depth + 1, &r.target);
        self.condition(depth + 1, &r.condition);
        self.line(depth, "</Rule>");
    }

    fn obligations(&mut self, depth: usize, os: &[Obligation]) {
        if os.is_empty() {
            return;
        }
        self.line(depth, "<ObligationExpressions>");
        for o in os {
            self.line(
                depth + 1,
                &format!(
                    "<ObligationExpression ObligationId=\"{}\" FulfillOn=\"{}\">",
                    escape(&o.id),
                    o.fulfill_on.name()
                ),
            );
            for (key, text) in [
                ("attribute-id", o.attribute_id.as_str()),
                ("data-type", o.data_type.name()),
                ("action", o.action.as_str()),
            ] {
                self.line(depth + 2, &format!("<AttributeAssignmentExpression AttributeId=\"{key}\">"));
                self.value(depth + 3, &AttributeValue::string(text));
                self.line(depth + 2, "</AttributeAssignmentExpression>");
            }
            self.line(depth + 1, "</ObligationExpression>");
        }
        self.line(depth, "</ObligationExpressions>");
    }

    fn node(&mut self, depth: usize, n: &PolicyNode, ns: &str) {
        match n {
            PolicyNode::Policy(p) => {
                self.line(
                    depth,
                    &format!(
                        "<Policy{ns} PolicyId=\"{}\" RuleCombiningAlgId=\"{}\" Version=\"1.0\">",
                        escape(&p.id),
                        p.algorithm.rule_uri()
                    ),
                );
                self.target(depth + 1, &p.target);
                for r in &p.rules {
                    self.rule(depth + 1, r, "");
                }
                self.obligations(depth + 1, &p.obligations);
                self.line(depth, "</Policy>");
            }
            PolicyNode::PolicySet(s) => {
                self.line(
                    depth,
                    &format!(
                        "<PolicySet{ns} PolicySetId=\"{}\" PolicyCombiningAlgId=\"{}\" Version=\"1.0\">",
                        escape(&s.id),
                        s.algorithm.policy_uri()
                    ),
                );
                self.target(depth + 1, &s.target);
                for c in &s.children {
                    self.node(depth + 1, c, "");
                }
                self.obligations(depth + 1, &s.obligations);
                self.line(depth, "</PolicySet>");
            }
        }
    }
}

fn root_ns() -> String {
    format!(" xmlns=\"{NS}\"")
}

pub fn serialize_policy(node: &PolicyNode) -> String {
    let mut w = Writer {
        out: String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"),
    };
    w.node(0, node, &root_ns());
    w.out
}

pub fn serialize_rule(rule: &Rule) -> String {
    let mut w = Writer { out: String::new() };
    w.rule(0, rule, &root_ns());
    w.out
}

pub fn serialize_condition(c: &Condition) -> String {
    let mut w = Writer { out: String::new() };
    let _ = writeln!(w.out, "<Condition{}>", root_ns());
    if *c != Condition::True {
        w.apply(1, c);
    }
    w.out.push_str("</Condition>\n");
    w.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::*;

    #[test]
    fn example_policy_round_trips() {
        let p = example_policy();
        let xml = serialize_policy(&p);
        let doc = parse_policy(xml.as_bytes()).unwrap();
        assert_eq!(doc.root, p);
        assert_eq!(doc.byte_length, xml.len());
        let PolicyNode::Policy(body) = &doc.root else { panic!() };
        assert_eq!(body.rules.len(), 6);
        assert_eq!(body.algorithm, CombiningAlgorithm::DenyOverrides);
        assert!(body.rules[5].target.is_empty());
        assert_eq!(body.rules[5].condition, Condition::True);
    }

    #[test]
    fn minimal_policy_set_has_depth_two_below_rules() {
        let xml = r#"<PolicySet PolicySetId="S" PolicyCombiningAlgId="urn:oasis:names:tc:xacml:3.0:policy-combining-algorithm:first-applicable">
            <Policy PolicyId="P" RuleCombiningAlgId="urn:oasis:names:tc:xacml:3.0:rule-combining-algorithm:permit-overrides">
              <Rule RuleId="r" Effect="Permit"/>
            </Policy>
          </PolicySet>"#;
        let doc = parse_policy(xml.as_bytes()).unwrap();
        assert_eq!(doc.root.depth(), 2);
        assert_eq!(doc.root.rules().len(), 1);
    }

    #[test]
    fn only_one_applicable_is_rejected_on_policies() {
        let xml = r#"<Policy PolicyId="P" RuleCombiningAlgId="urn:oasis:names:tc:xacml:1.0:rule-combining-algorithm:only-one-applicable"><Rule RuleId="r" Effect="Permit"/></Policy>"#;
        assert!(matches!(
            parse_policy(xml.as_bytes()),
            Err(FormatError::UnknownAlgorithmUri { .. })
        ));
    }

    #[test]
    fn errors_carry_positions() {
        match parse_policy(b"<Policy PolicyId=\"P\"\n  <oops").unwrap_err() {
            FormatError::MalformedXml(pos, _) => assert_eq!(pos.line, 2),
            e => panic!("{e:?}"),
        }
        let xml = "<Policy PolicyId=\"P\" RuleCombiningAlgId=\"deny-overrides\">\n<VariableDefinition/></Policy>";
        assert_eq!(
            parse_policy(xml.as_bytes()).unwrap_err(),
            FormatError::UnsupportedElement {
                name: "VariableDefinition".into(),
                at: Pos { line: 2, col: 1 }
            }
        );
        let xml = r#"<Policy PolicyId="P" RuleCombiningAlgId="deny-overrides"><Rule RuleId="r" Effect="Deny"><Condition><Apply FunctionId="urn:x:function:regexp-match"/></Condition></Rule></Policy>"#;
        assert!(matches!(
            parse_policy(xml.as_bytes()).unwrap_err(),
            FormatError::UnknownFunctionUri { .. }
        ));
    }

    #[test]
    fn mismatched_literal_type_is_reported() {
        let xml = r#"<Policy PolicyId="P" RuleCombiningAlgId="deny-overrides"><Rule RuleId="r4" Effect="Deny"><Condition>
          <Apply FunctionId="urn:oasis:names:tc:xacml:1.0:function:integer-less-than">
            <AttributeDesignator Category="urn:oasis:names:tc:xacml:3.0:attribute-category:resource" AttributeId="age" DataType="http://www.w3.org/2001/XMLSchema#integer"/>
            <AttributeValue DataType="http://www.w3.org/2001/XMLSchema#string">sixteen</AttributeValue>
          </Apply></Condition></Rule></Policy>"#;
        assert_eq!(
            parse_policy(xml.as_bytes()).unwrap_err(),
            FormatError::TypeMismatch("r4".into())
        );
    }

    #[test]
    fn standard_wrappers_are_accepted() {
        let xml = r#"<Condition><Apply FunctionId="urn:oasis:names:tc:xacml:1.0:function:string-at-least-one-member-of">
            <Apply FunctionId="urn:oasis:names:tc:xacml:1.0:function:string-bag">
              <AttributeValue DataType="http://www.w3.org/2001/XMLSchema#string">a</AttributeValue>
              <AttributeValue DataType="http://www.w3.org/2001/XMLSchema#string">b</AttributeValue>
            </Apply>
            <AttributeDesignator Category="urn:oasis:names:tc:xacml:3.0:attribute-category:resource" AttributeId="x" DataType="http://www.w3.org/2001/XMLSchema#string"/>
          </Apply></Condition>"#;
        let c = parse_condition(xml.as_bytes()).unwrap();
        let x = AttributeRef::new(AttributeCategory::Resource, "x", ValueType::String);
        assert_eq!(c, Condition::Predicate(Predicate::in_set(x, ["a", "b"])));
    }

    #[test]
    fn rules_and_conditions_round_trip() {
        for r in [rule1(), rule3(), rule6(), department_rule()] {
            assert_eq!(parse_rule(serialize_rule(&r).as_bytes()).unwrap(), r);
            assert_eq!(
                parse_condition(serialize_condition(&r.condition).as_bytes()).unwrap(),
                r.condition
            );
        }
    }
}
