//! Lumped-parameter network models and their text format.
//!
//! A model is a tree of loop (common flow) and node (common effort)
//! junctions. Elements and sources hang off exactly one junction each;
//! junction-to-junction links are listed on both sides with opposite signs.
//! See `docs/model-format.md` for the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::expr::{ConstitutiveExpr, ExprError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: unknown kind `{kind}`")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("dangling port: {0}")]
    DanglingPort(String),
    #[error("line {line}, column {col}: {source}")]
    Law {
        line: usize,
        col: usize,
        #[source]
        source: ExprError,
    },
    #[error("no elements")]
    NoElements,
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElementKind {
    Inertial,
    Capacitive,
    Resistive,
    EffortSource,
    FlowSource,
}

impl ElementKind {
    pub fn is_storage(self) -> bool {
        matches!(self, Self::Inertial | Self::Capacitive)
    }

    pub fn is_source(self) -> bool {
        matches!(self, Self::EffortSource | Self::FlowSource)
    }

    /// Variable name the element's `law` must use.
    pub fn law_var(self) -> Option<&'static str> {
        match self {
            Self::Inertial => Some("p"),
            Self::Capacitive => Some("q"),
            Self::Resistive => Some("f"),
            _ => None,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            Self::Inertial => "inertial",
            Self::Capacitive => "capacitive",
            Self::Resistive => "resistive",
            Self::EffortSource => "effort",
            Self::FlowSource => "flow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JunctionKind {
    /// Common flow; signed efforts sum to zero.
    Loop,
    /// Common effort; signed flows sum to zero.
    Node,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    /// `e = Φ(f)` for resistors, `f = Φ_I(p)` for inertias, `e = Φ_C(q)` for capacitors.
    pub law: Option<ConstitutiveExpr>,
    /// Resistor only: `f = Φ⁻¹(e)`.
    pub inverse: Option<ConstitutiveExpr>,
}

impl Element {
    /// True when every supplied law is `c * x`. Sources are never linear laws.
    pub fn is_linear(&self) -> bool {
        if self.kind.is_source() {
            return false;
        }
        self.law.iter().chain(self.inverse.iter()).all(ConstitutiveExpr::is_linear)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub id: String,
    /// +1 or -1
    pub sign: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub kind: JunctionKind,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub name: String,
    /// Storage and resistive elements followed by sources, in declaration order.
    pub elements: Vec<Element>,
    pub junctions: Vec<Junction>,
    /// Storage element ids in state-vector order.
    pub state_order: Vec<String>,
    pub zero_order: bool,
}

impl NetworkModel {
    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn junction(&self, id: &str) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.id == id)
    }

    /// Sources in input-vector order.
    pub fn sources(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter().filter(|e| e.kind.is_source())
    }

    pub fn source_ids(&self) -> Vec<String> {
        self.sources().map(|e| e.id.clone()).collect()
    }

    pub fn input_count(&self) -> usize {
        self.sources().count()
    }

    pub fn storage_count(&self) -> usize {
        self.elements.iter().filter(|e| e.kind.is_storage()).count()
    }

    /// Junction holding the port of element `id`.
    pub fn junction_of(&self, id: &str) -> Option<&Junction> {
        self.junctions.iter().find(|j| j.members.iter().any(|m| m.id == id))
    }

    /// Replace the law (and optionally inverse) of an element, re-validating.
    pub fn with_laws(
        &self,
        id: &str,
        law: Option<&str>,
        inverse: Option<&str>,
    ) -> Result<NetworkModel, ModelError> {
        let mut model = self.clone();
        let element = model
            .elements
            .iter_mut()
            .find(|e| e.id == id)
            .ok_or_else(|| ModelError::Invalid(format!("no element `{id}`")))?;
        let law_err = |source| ModelError::Law { line: 0, col: 0, source };
        if let Some(text) = law {
            let var = element
                .kind
                .law_var()
                .ok_or_else(|| ModelError::Invalid(format!("`{id}` is a source and has no law")))?;
            element.law = Some(ConstitutiveExpr::parse(text, Some(var)).map_err(law_err)?);
        }
        if let Some(text) = inverse {
            if element.kind != ElementKind::Resistive {
                return Err(ModelError::Invalid(format!("`{id}` is not resistive")));
            }
            element.inverse = Some(ConstitutiveExpr::parse(text, Some("e")).map_err(law_err)?);
        }
        model.validate()?;
        Ok(model)
    }

    /// Check structural invariants. Called by the parser and by transforms.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.elements.is_empty() {
            return Err(ModelError::NoElements);
        }
        let mut ids = BTreeSet::new();
        for id in self.elements.iter().map(|e| &e.id).chain(self.junctions.iter().map(|j| &j.id)) {
            if !ids.insert(id.as_str()) {
                return Err(ModelError::DuplicateId { line: 0, id: id.clone() });
            }
        }
        for e in &self.elements {
            match e.kind {
                ElementKind::Inertial | ElementKind::Capacitive => {
                    if e.law.is_none() {
                        return Err(ModelError::Invalid(format!("storage element `{}` has no law", e.id)));
                    }
                    if e.inverse.is_some() {
                        return Err(ModelError::Invalid(format!(
                            "storage element `{}` cannot carry an inverse law",
                            e.id
                        )));
                    }
                }
                ElementKind::Resistive => {
                    if e.law.is_none() && e.inverse.is_none() {
                        return Err(ModelError::Invalid(format!("resistor `{}` has no law", e.id)));
                    }
                }
                _ => {
                    if e.law.is_some() || e.inverse.is_some() {
                        return Err(ModelError::Invalid(format!("source `{}` cannot carry a law", e.id)));
                    }
                }
            }
        }

        // Each element port in exactly one junction.
        let junction_ids: BTreeSet<&str> = self.junctions.iter().map(|j| j.id.as_str()).collect();
        let mut attached: BTreeMap<&str, &str> = BTreeMap::new();
        for j in &self.junctions {
            if j.members.len() < 2 {
                return Err(ModelError::Invalid(format!("junction `{}` needs at least two members", j.id)));
            }
            let mut seen = BTreeSet::new();
            for m in &j.members {
                if m.sign != 1 && m.sign != -1 {
                    return Err(ModelError::Invalid(format!("member sign of `{}` must be ±1", m.id)));
                }
                if !seen.insert(m.id.as_str()) {
                    return Err(ModelError::Invalid(format!("`{}` listed twice in junction `{}`", m.id, j.id)));
                }
                if m.id == j.id {
                    return Err(ModelError::Invalid(format!("junction `{}` lists itself", j.id)));
                }
                if junction_ids.contains(m.id.as_str()) {
                    continue;
                }
                if self.element(&m.id).is_none() {
                    return Err(ModelError::DanglingPort(format!(
                        "junction `{}` references unknown `{}`",
                        j.id, m.id
                    )));
                }
                if let Some(prev) = attached.insert(&m.id, &j.id) {
                    return Err(ModelError::Invalid(format!(
                        "port of `{}` attached to both `{prev}` and `{}`",
                        m.id, j.id
                    )));
                }
            }
        }
        for e in &self.elements {
            if !attached.contains_key(e.id.as_str()) {
                return Err(ModelError::DanglingPort(format!("`{}` is not attached to any junction", e.id)));
            }
        }

        // Links: listed on both sides with opposite signs; junction graph is a tree.
        let mut edges = 0usize;
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for j in &self.junctions {
            adjacency.entry(&j.id).or_default();
            for m in j.members.iter().filter(|m| junction_ids.contains(m.id.as_str())) {
                let other = self.junction(&m.id).expect("checked above");
                let back = other.members.iter().find(|b| b.id == j.id).ok_or_else(|| {
                    ModelError::DanglingPort(format!(
                        "link `{}` -> `{}` is not listed in `{}`",
                        j.id, other.id, other.id
                    ))
                })?;
                if back.sign == m.sign {
                    return Err(ModelError::Invalid(format!(
                        "link between `{}` and `{}` must carry opposite signs",
                        j.id, other.id
                    )));
                }
                if j.id < other.id {
                    edges += 1;
                }
                adjacency.entry(&j.id).or_default().push(&other.id);
            }
        }
        if let Some(first) = self.junctions.first() {
            let mut seen = BTreeSet::from([first.id.as_str()]);
            let mut stack = vec![first.id.as_str()];
            while let Some(j) = stack.pop() {
                for &n in &adjacency[j] {
                    if seen.insert(n) {
                        stack.push(n);
                    }
                }
            }
            if seen.len() != self.junctions.len() {
                return Err(ModelError::Invalid("junction graph is not connected".into()));
            }
            if edges + 1 != self.junctions.len() {
                return Err(ModelError::Invalid("junction graph contains a cycle".into()));
            }
        }

        // State order.
        let storage: BTreeSet<&str> = self
            .elements
            .iter()
            .filter(|e| e.kind.is_storage())
            .map(|e| e.id.as_str())
            .collect();
        let listed: BTreeSet<&str> = self.state_order.iter().map(String::as_str).collect();
        if listed.len() != self.state_order.len() || listed != storage {
            return Err(ModelError::Invalid(
                "state order must list every storage element exactly once".into(),
            ));
        }
        if storage.is_empty() && !self.zero_order {
            return Err(ModelError::Invalid(
                "model has no storage elements (set `zero_order = true` to allow)".into(),
            ));
        }
        Ok(())
    }
}

/// Parse a model file.
pub fn parse_model(text: &str) -> Result<NetworkModel, ModelError> {
    #[derive(PartialEq)]
    enum Section {
        Header,
        Elements,
        Sources,
        Junctions,
        States,
    }

    let mut section = Section::Header;
    let mut name = String::from("model");
    let mut zero_order = false;
    let mut elements = Vec::new();
    let mut sources = Vec::new();
    let mut junctions = Vec::new();
    let mut states: Option<Vec<String>> = None;
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = strip_comment(raw);
        if content.trim().is_empty() {
            continue;
        }
        let trimmed = content.trim();
        if trimmed.starts_with('[') {
            section = match trimmed {
                "[elements]" => Section::Elements,
                "[sources]" => Section::Sources,
                "[junctions]" => Section::Junctions,
                "[states]" => {
                    states.get_or_insert_with(Vec::new);
                    Section::States
                }
                other => {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        col: col_of(raw, trimmed),
                        msg: format!("unknown section `{other}`"),
                    })
                }
            };
            continue;
        }
        let words = split_words(content).map_err(|(col, msg)| ModelError::Syntax { line: line_no, col, msg })?;
        let mut check_id = |w: &Word| -> Result<String, ModelError> {
            if !is_ident(&w.text) {
                return Err(ModelError::Syntax {
                    line: line_no,
                    col: w.col,
                    msg: format!("invalid id `{}`", w.text),
                });
            }
            if !seen_ids.insert(w.text.clone()) {
                return Err(ModelError::DuplicateId { line: line_no, id: w.text.clone() });
            }
            Ok(w.text.clone())
        };
        match section {
            Section::Header => {
                let (key, value) = trimmed.split_once('=').ok_or_else(|| ModelError::Syntax {
                    line: line_no,
                    col: col_of(raw, trimmed),
                    msg: "expected `key = value` before the first section".into(),
                })?;
                match key.trim() {
                    "name" => name = value.trim().to_string(),
                    "zero_order" => {
                        zero_order = match value.trim() {
                            "true" => true,
                            "false" => false,
                            v => {
                                return Err(ModelError::Syntax {
                                    line: line_no,
                                    col: col_of(raw, value.trim()),
                                    msg: format!("expected true or false, found `{v}`"),
                                })
                            }
                        }
                    }
                    k => {
                        return Err(ModelError::Syntax {
                            line: line_no,
                            col: col_of(raw, trimmed),
                            msg: format!("unknown header key `{k}`"),
                        })
                    }
                }
            }
            Section::Elements => {
                if words.len() < 2 {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        col: words[0].col,
                        msg: "expected `<id> <kind> law=\"...\"`".into(),
                    });
                }
                let id = check_id(&words[0])?;
                let kind = match words[1].text.as_str() {
                    "inertial" => ElementKind::Inertial,
                    "capacitive" => ElementKind::Capacitive,
                    "resistive" => ElementKind::Resistive,
                    other => return Err(ModelError::UnknownKind { line: line_no, kind: other.to_string() }),
                };
                let mut element = Element { id, kind, law: None, inverse: None };
                for w in &words[2..] {
                    let (key, value, value_col) = w.key_value().ok_or_else(|| ModelError::Syntax {
                        line: line_no,
                        col: w.col,
                        msg: format!("expected key=\"value\", found `{}`", w.text),
                    })?;
                    let var = match key {
                        "law" => kind.law_var().expect("non-source"),
                        "inverse" if kind == ElementKind::Resistive => "e",
                        _ => {
                            return Err(ModelError::Syntax {
                                line: line_no,
                                col: w.col,
                                msg: format!("unexpected attribute `{key}` for {} element", kind.keyword()),
                            })
                        }
                    };
                    let expr = ConstitutiveExpr::parse(value, Some(var)).map_err(|source| {
                        let col = match &source {
                            ExprError::Syntax { col, .. } => value_col + col - 1,
                            _ => value_col,
                        };
                        ModelError::Law { line: line_no, col, source }
                    })?;
                    let slot = if key == "law" { &mut element.law } else { &mut element.inverse };
                    if slot.replace(expr).is_some() {
                        return Err(ModelError::Syntax {
                            line: line_no,
                            col: w.col,
                            msg: format!("`{key}` given twice"),
                        });
                    }
                }
                if element.law.is_none() && element.inverse.is_none() {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        col: words[1].col,
                        msg: "element needs a law".into(),
                    });
                }
                elements.push(element);
            }
            Section::Sources => {
                if words.len() != 2 {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        col: words[0].col,
                        msg: "expected `<id> <effort|flow>`".into(),
                    });
                }
                let id = check_id(&words[0])?;
                let kind = match words[1].text.as_str() {
                    "effort" => ElementKind::EffortSource,
                    "flow" => ElementKind::FlowSource,
                    other => return Err(ModelError::UnknownKind { line: line_no, kind: other.to_string() }),
                };
                sources.push(Element { id, kind, law: None, inverse: None });
            }
            Section::Junctions => {
                if words.len() != 3 {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        col: words[0].col,
                        msg: "expected `<id> <loop|node> members=<±id,...>`".into(),
                    });
                }
                let id = check_id(&words[0])?;
                let kind = match words[1].text.as_str() {
                    "loop" => JunctionKind::Loop,
                    "node" => JunctionKind::Node,
                    other => return Err(ModelError::UnknownKind { line: line_no, kind: other.to_string() }),
                };
                let list = words[2]
                    .text
                    .strip_prefix("members=")
                    .ok_or_else(|| ModelError::Syntax {
                        line: line_no,
                        col: words[2].col,
                        msg: "expected `members=`".into(),
                    })?;
                let mut members = Vec::new();
                let mut col = words[2].col + "members=".len();
                for item in list.split(',') {
                    let (sign, rest) = match item.chars().next() {
                        Some('+') => (1, &item[1..]),
                        Some('-') => (-1, &item[1..]),
                        _ => {
                            return Err(ModelError::Syntax {
                                line: line_no,
                                col,
                                msg: format!("member `{item}` needs a leading + or -"),
                            })
                        }
                    };
                    if !is_ident(rest) {
                        return Err(ModelError::Syntax {
                            line: line_no,
                            col: col + 1,
                            msg: format!("invalid member id `{rest}`"),
                        });
                    }
                    members.push(Member { id: rest.to_string(), sign });
                    col += item.chars().count() + 1;
                }
                junctions.push(Junction { id, kind, members });
            }
            Section::States => {
                let list = states.get_or_insert_with(Vec::new);
                for w in &words {
                    for part in w.text.split(',').filter(|s| !s.is_empty()) {
                        list.push(part.to_string());
                    }
                }
            }
        }
    }

    if elements.is_empty() && sources.is_empty() {
        return Err(ModelError::NoElements);
    }
    let state_order = states.unwrap_or_else(|| {
        elements
            .iter()
            .filter(|e: &&Element| e.kind.is_storage())
            .map(|e| e.id.clone())
            .collect()
    });
    elements.extend(sources);
    let model = NetworkModel { name, elements, junctions, state_order, zero_order };
    model.validate()?;
    Ok(model)
}

impl fmt::Display for NetworkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        if self.zero_order {
            writeln!(f, "zero_order = true")?;
        }
        writeln!(f, "[elements]")?;
        for e in self.elements.iter().filter(|e| !e.kind.is_source()) {
            write!(f, "{} {}", e.id, e.kind.keyword())?;
            if let Some(law) = &e.law {
                write!(f, " law=\"{law}\"")?;
            }
            if let Some(inv) = &e.inverse {
                write!(f, " inverse=\"{inv}\"")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "[sources]")?;
        for e in self.sources() {
            writeln!(f, "{} {}", e.id, e.kind.keyword())?;
        }
        writeln!(f, "[junctions]")?;
        for j in &self.junctions {
            let kind = match j.kind {
                JunctionKind::Loop => "loop",
                JunctionKind::Node => "node",
            };
            let members: Vec<String> = j
                .members
                .iter()
                .map(|m| format!("{}{}", if m.sign > 0 { '+' } else { '-' }, m.id))
                .collect();
            writeln!(f, "{} {kind} members={}", j.id, members.join(","))?;
        }
        writeln!(f, "[states]")?;
        for s in &self.state_order {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn col_of(raw: &str, part: &str) -> usize {
    let offset = part.as_ptr() as usize - raw.as_ptr() as usize;
    raw[..offset].chars().count() + 1
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

struct Word {
    text: String,
    col: usize,
}

impl Word {
    /// Split `key="value"`; returns the 1-based column of the value's first char.
    fn key_value(&self) -> Option<(&str, &str, usize)> {
        let (key, rest) = self.text.split_once('=')?;
        let value = rest.strip_prefix('"')?.strip_suffix('"')?;
        Some((key, value, self.col + key.chars().count() + 2))
    }
}

/// Whitespace-separated words; double quotes group.
fn split_words(line: &str) -> Result<Vec<Word>, (usize, String)> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut in_quote = false;
    let mut quote_col = 0;
    for (i, c) in line.chars().enumerate() {
        if c == '"' {
            if !in_quote {
                quote_col = i + 1;
            }
            in_quote = !in_quote;
        }
        if c.is_whitespace() && !in_quote {
            if !current.is_empty() {
                words.push(Word { text: std::mem::take(&mut current), col: start + 1 });
            }
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
    }
    if in_quote {
        return Err((quote_col, "unterminated quote".into()));
    }
    if !current.is_empty() {
        words.push(Word { text: current, col: start + 1 });
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Node;

    pub(crate) const FIG1: &str = "\
name = fig1
[elements]
mass    inertial   law=\"p/2\"
spring  capacitive law=\"sgn(q)*q^2\"
damper1 resistive  law=\"f^3\"
damper2 resistive  law=\"sgn(f)*f^2\"
[sources]
u_e1 effort
u_e2 effort
[junctions]
plate loop members=+u_e1,-damper1,-link
link  node members=+plate,-spring,-body
body  loop members=+link,-mass,-damper2,+u_e2
[states]
mass
spring
";

    #[test]
    fn parses_fig1() {
        let m = parse_model(FIG1).unwrap();
        assert_eq!(m.storage_count(), 2);
        assert_eq!(m.elements.iter().filter(|e| e.kind == ElementKind::Resistive).count(), 2);
        assert_eq!(m.input_count(), 2);
        assert_eq!(m.junctions.len(), 3);
        assert!(m.element("mass").unwrap().is_linear());
        assert!(!m.element("spring").unwrap().is_linear());
    }

    #[test]
    fn quartic_law_ast() {
        let text = "[elements]\nd resistive law=\"sgn(f)*f^4\"\nc capacitive law=\"q\"\n\
                    [sources]\nu effort\n[junctions]\nj loop members=+u,-d,-c\n";
        let m = parse_model(text).unwrap();
        let law = m.element("d").unwrap().law.as_ref().unwrap();
        assert_eq!(
            law.root(),
            &Node::Mul(Box::new(Node::Sgn(Box::new(Node::Var))), Box::new(Node::Pow(Box::new(Node::Var), 4)))
        );
    }

    #[test]
    fn error_cases() {
        assert_eq!(parse_model("name = x\n[elements]\n"), Err(ModelError::NoElements));
        assert!(matches!(
            parse_model("[elements]\na spring law=\"q\"\n"),
            Err(ModelError::UnknownKind { line: 2, .. })
        ));
        assert!(matches!(
            parse_model("[elements]\na capacitive law=\"q\"\na capacitive law=\"q\"\n"),
            Err(ModelError::DuplicateId { line: 3, .. })
        ));
        assert!(matches!(
            parse_model("[elements]\na capacitive law=\"q\"\nb resistive law=\"f\"\n[junctions]\nj loop members=+a,-b,-zz\n"),
            Err(ModelError::DanglingPort(_))
        ));
        assert!(matches!(
            parse_model("[elements]\na capacitive law=\"q\"\nb resistive law=\"f\"\n[junctions]\nj loop members=+a\n"),
            Err(ModelError::Invalid(_))
        ));
        assert!(matches!(
            parse_model("[elements]\na capacitive law=\"p^2\"\n"),
            Err(ModelError::Law { line: 2, source: ExprError::WrongVariable { .. }, .. })
        ));
        // column points into the law text
        let err = parse_model("[elements]\na capacitive law=\"q $ 2\"\n").unwrap_err();
        assert!(matches!(err, ModelError::Law { line: 2, col: 21, .. }), "{err:?}");
    }

    #[test]
    fn links_need_both_sides() {
        let text = "[elements]\na capacitive law=\"q\"\nb resistive law=\"f\"\nc inertial law=\"p\"\n\
                    [junctions]\nj1 loop members=+a,-b,-j2\nj2 node members=+c,-b2\n";
        assert!(parse_model(text).is_err());
        let text = "[elements]\na capacitive law=\"q\"\nb resistive law=\"f\"\nc inertial law=\"p\"\n\
                    [junctions]\nj1 loop members=+a,-b,-j2\nj2 node members=+j1,-c\n";
        assert!(parse_model(text).is_ok());
        let text = "[elements]\na capacitive law=\"q\"\nb resistive law=\"f\"\nc inertial law=\"p\"\n\
                    [junctions]\nj1 loop members=+a,-b,-j2\nj2 node members=-j1,-c\n";
        assert!(matches!(parse_model(text), Err(ModelError::Invalid(_))));
        let text = "[elements]\na capacitive law=\"q\"\nb resistive law=\"f\"\nc inertial law=\"p\"\n\
                    [junctions]\nj1 loop members=+a,-b,-j2\nj2 node members=+c\n";
        assert!(matches!(parse_model(text), Err(ModelError::DanglingPort(_)) | Err(ModelError::Invalid(_))));
    }

    #[test]
    fn print_parse_is_idempotent() {
        let m = parse_model(FIG1).unwrap();
        let again = parse_model(&m.to_string()).unwrap();
        assert_eq!(m, again);
        assert_eq!(again.to_string(), m.to_string());
    }
}
