use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::expr::{parse_equation, parse_expr, Expr, ExprError, Scope, Slot, Tape, Taylor2};
use crate::caputo::FractionalOrder;
use crate::error::{Error, Result};
use crate::polynet::{Activation, Architecture};

pub const PROBLEM_FORMAT: &str = "fracpinn-problem";
pub const PROBLEM_VERSION: u32 = 1;

const RESERVED: &[&str] = &[
    "pi", "e", "D", "gamma", "exp", "sin", "cos", "tan", "sec", "sqrt", "ln", "log",
];

/// One unknown function of the problem.
#[derive(Debug, Clone)]
pub struct State {
    pub name: String,
    /// `None` for an algebraic state that is never differentiated by `D`.
    pub order: Option<FractionalOrder>,
    /// `k_p`, the value of the `p`-th derivative at the domain start.
    pub initial: Vec<f64>,
    pub exact: Option<Expr>,
    pub history: Option<Expr>,
}

impl State {
    pub fn is_algebraic(&self) -> bool {
        self.order.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct Equation {
    pub source: String,
    pub(crate) expr: Expr,
    pub(crate) tape: Tape,
}

impl Equation {
    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// A single (fractional) delay differential equation.
    Fdde,
    /// A coupled system of differential and algebraic equations.
    DaeSystem,
}

/// How delayed arguments that fall before the domain start are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryPolicy {
    /// Use the state's history if it has one, else evaluate the network.
    #[default]
    Prefer,
    /// Always evaluate the network, even where a history exists.
    Ignore,
    /// Require a history; fail otherwise.
    Strict,
}

/// A layer in a problem's suggested network, independent of the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerTemplate {
    Dense {
        width: usize,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
    Legendre {
        width: usize,
    },
    Chebyshev {
        width: usize,
    },
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkTemplate {
    #[serde(default)]
    pub per_output_affine: bool,
    pub layers: Vec<LayerTemplate>,
}

impl NetworkTemplate {
    /// Legendre(16) -> tanh 32 -> tanh 64 -> tanh 32 -> Legendre(5) -> linear 1.
    pub fn standard() -> Self {
        use LayerTemplate::*;
        Self {
            per_output_affine: false,
            layers: vec![
                Legendre { width: 16 },
                Dense {
                    width: 32,
                    activation: Activation::Tanh,
                },
                Dense {
                    width: 64,
                    activation: Activation::Tanh,
                },
                Dense {
                    width: 32,
                    activation: Activation::Tanh,
                },
                Legendre { width: 5 },
                Dense {
                    width: 1,
                    activation: Activation::Identity,
                },
            ],
        }
    }

    pub fn build(&self, domain: [f64; 2]) -> Result<Architecture> {
        let mut b = Architecture::builder(domain).per_output_affine(self.per_output_affine);
        for layer in &self.layers {
            b = match *layer {
                LayerTemplate::Dense { width, activation } => b.dense(width, activation),
                LayerTemplate::Legendre { width } => b.legendre(width),
                LayerTemplate::Chebyshev { width } => b.chebyshev(width),
            };
        }
        let arch = b.build()?;
        if arch.output_dim() != 1 {
            return Err(Error::Architecture(format!(
                "a state network must have one output, this one has {}",
                arch.output_dim()
            )));
        }
        Ok(arch)
    }
}

/// A fractional delay differential equation or a DAE system, with residual
/// equations written in the expression language.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub description: String,
    pub variable: String,
    pub domain: [f64; 2],
    pub states: Vec<State>,
    pub equations: Vec<Equation>,
    /// Delayed arguments referenced by the equations, indexed by slot.
    pub delays: Vec<Expr>,
    pub network: NetworkTemplate,
    pub history_policy: HistoryPolicy,
    source: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    format: Option<String>,
    version: Option<u32>,
    name: String,
    #[serde(default)]
    description: String,
    variable: Option<String>,
    domain: [f64; 2],
    #[serde(default)]
    definitions: BTreeMap<String, Spanned<String>>,
    state: Vec<StateFile>,
    equation: Vec<EquationFile>,
    network: Option<NetworkTemplate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    name: String,
    order: Option<f64>,
    #[serde(default)]
    initial: Vec<f64>,
    exact: Option<Spanned<String>>,
    history: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EquationFile {
    residual: Spanned<String>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

fn expr_err(text: &str, span: &Spanned<String>, what: &str, e: ExprError) -> Error {
    Error::Parse {
        line: Some(line_of(text, span.span().start)),
        message: format!("{what}: {e}"),
    }
}

fn check_identifier(name: &str, what: &str) -> Result<()> {
    let mut chars = name.chars();
    let ok = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !ok {
        return Err(Error::Problem(format!(
            "{what} `{name}` is not a valid identifier"
        )));
    }
    if RESERVED.contains(&name) {
        return Err(Error::Problem(format!(
            "{what} `{name}` shadows a built-in name"
        )));
    }
    Ok(())
}

impl Problem {
    /// Parses a problem definition document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ProblemFile = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        if let Some(f) = &file.format {
            if f != PROBLEM_FORMAT {
                return Err(Error::Problem(format!(
                    "unexpected format `{f}`, expected `{PROBLEM_FORMAT}`"
                )));
            }
        }
        if let Some(v) = file.version {
            if v != PROBLEM_VERSION {
                return Err(Error::Problem(format!("unsupported problem version {v}")));
            }
        }
        let variable = file.variable.unwrap_or_else(|| "t".to_string());
        check_identifier(&variable, "variable")?;
        let [a, b] = file.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Problem(format!(
                "domain [{a}, {b}] must be finite with a < b"
            )));
        }

        let names: Vec<String> = file.state.iter().map(|s| s.name.clone()).collect();
        if names.is_empty() {
            return Err(Error::Problem("at least one [[state]] is required".into()));
        }
        for (i, n) in names.iter().enumerate() {
            check_identifier(n, "state")?;
            if *n == variable || names[..i].contains(n) {
                return Err(Error::Problem(format!("state name `{n}` is used twice")));
            }
        }
        if file.equation.len() != names.len() {
            return Err(Error::Problem(format!(
                "{} equations for {} states; the system must be square",
                file.equation.len(),
                names.len()
            )));
        }

        let definitions = resolve_definitions(text, &file.definitions, &variable, &names)?;
        let parse_fn = |span: &Spanned<String>, what: &str| -> Result<Expr> {
            let mut scope = Scope {
                variable: &variable,
                states: &names,
                definitions: &definitions,
                allow_states: false,
                delays: None,
            };
            parse_expr(span.get_ref(), &mut scope).map_err(|e| expr_err(text, span, what, e))
        };

        let mut states = Vec::with_capacity(file.state.len());
        for s in &file.state {
            let q = s.order.unwrap_or(1.0);
            let order = if q == 0.0 {
                None
            } else {
                if !(q > 0.0 && q < 3.0) {
                    return Err(Error::Problem(format!(
                        "state `{}`: order {q} is outside [0, 3)",
                        s.name
                    )));
                }
                Some(FractionalOrder::new(q)?)
            };
            let want = order.map_or(0, |o| o.initial_value_count());
            let count_ok = match order {
                Some(_) => s.initial.len() == want,
                None => s.initial.len() <= 1,
            };
            if !count_ok {
                return Err(Error::Problem(format!(
                    "state `{}` of order {q} needs {} initial value(s), got {}",
                    s.name,
                    if order.is_some() {
                        want.to_string()
                    } else {
                        "0 or 1".into()
                    },
                    s.initial.len()
                )));
            }
            let exact = s
                .exact
                .as_ref()
                .map(|e| parse_fn(e, "exact solution"))
                .transpose()?;
            let history = s
                .history
                .as_ref()
                .map(|e| parse_fn(e, "history"))
                .transpose()?;
            states.push(State {
                name: s.name.clone(),
                order,
                initial: s.initial.clone(),
                exact,
                history,
            });
        }

        let mut delays = Vec::new();
        let mut equations = Vec::with_capacity(file.equation.len());
        for eq in &file.equation {
            let mut scope = Scope {
                variable: &variable,
                states: &names,
                definitions: &definitions,
                allow_states: true,
                delays: Some(&mut delays),
            };
            let expr = parse_equation(eq.residual.get_ref(), &mut scope)
                .map_err(|e| expr_err(text, &eq.residual, "equation", e))?;
            let mut slots = Vec::new();
            expr.slots(&mut slots);
            for s in slots {
                if let Slot::Leading { state } = s {
                    if states[state].is_algebraic() {
                        return Err(Error::Parse {
                            line: Some(line_of(text, eq.residual.span().start)),
                            message: format!("D({}) used but the state has order 0", names[state]),
                        });
                    }
                }
            }
            let tape = Tape::compile(&expr);
            equations.push(Equation {
                source: eq.residual.get_ref().clone(),
                expr,
                tape,
            });
        }

        let problem = Problem {
            name: file.name,
            description: file.description,
            variable,
            domain: file.domain,
            states,
            equations,
            delays,
            network: file.network.unwrap_or_else(NetworkTemplate::standard),
            history_policy: HistoryPolicy::default(),
            source: Some(text.to_string()),
        };
        for s in 0..problem.states.len() {
            problem.network_order(s)?;
        }
        Ok(problem)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// The document this problem was parsed from.
    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn kind(&self) -> ProblemKind {
        if self.states.len() == 1 {
            ProblemKind::Fdde
        } else {
            ProblemKind::DaeSystem
        }
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name == name)
    }

    pub fn has_exact(&self) -> bool {
        self.states.iter().all(|s| s.exact.is_some())
    }

    /// Exact solution of state `s` at `t`, if known.
    pub fn exact(&self, s: usize, t: f64) -> Option<f64> {
        self.states[s].exact.as_ref().map(|e| e.eval(t))
    }

    /// Exact value and first two derivatives of state `s` at `t`.
    pub fn exact_taylor(&self, s: usize, t: f64) -> Option<Taylor2> {
        self.states[s].exact.as_ref().map(|e| e.eval_taylor(t))
    }

    /// The known, state-independent part of equation `eq` at `t`: minus the
    /// residual with every state slot set to zero.
    pub fn forcing(&self, eq: usize, t: f64) -> f64 {
        -self.equations[eq].expr.eval_with(t, &|_| 0.0)
    }

    /// Highest input derivative of state `s` the residual and boundary
    /// terms need from its network.
    pub fn network_order(&self, s: usize) -> Result<usize> {
        let st = &self.states[s];
        let mut order = st.initial.len().saturating_sub(1);
        for eq in &self.equations {
            for slot in eq.tape.slots() {
                match *slot {
                    Slot::State { state, deriv, .. } if state == s => order = order.max(deriv),
                    Slot::Leading { state } if state == s => {
                        let o = st.order.expect("validated at parse time");
                        let need = if o.is_fractional() {
                            o.integer_part() as usize
                        } else {
                            o.q().round() as usize
                        };
                        order = order.max(need);
                    }
                    _ => {}
                }
            }
        }
        if order > 2 {
            return Err(Error::Problem(format!(
                "state `{}` needs derivative order {order}; at most 2 is supported",
                st.name
            )));
        }
        Ok(order)
    }

    /// Replaces the order of every differential state by `q` and drops exact
    /// solutions, which no longer apply.
    pub fn with_order(mut self, q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 3.0) {
            return Err(Error::Config(format!(
                "order override {q} is outside (0, 3)"
            )));
        }
        let o = FractionalOrder::new(q)?;
        for s in &mut self.states {
            if s.order.is_some() {
                if s.initial.len() != o.initial_value_count() {
                    s.initial.resize(o.initial_value_count(), 0.0);
                }
                s.order = Some(o);
                s.exact = None;
            }
        }
        for s in 0..self.states.len() {
            self.network_order(s)?;
        }
        self.source = None;
        Ok(self)
    }

    pub fn with_history_policy(mut self, policy: HistoryPolicy) -> Self {
        self.history_policy = policy;
        self
    }

    pub fn architecture(&self) -> Result<Architecture> {
        self.network.build(self.domain)
    }
}

fn resolve_definitions(
    text: &str,
    raw: &BTreeMap<String, Spanned<String>>,
    variable: &str,
    states: &[String],
) -> Result<HashMap<String, Expr>> {
    for name in raw.keys() {
        check_identifier(name, "definition")?;
        if name == variable || states.contains(name) {
            return Err(Error::Problem(format!(
                "definition `{name}` shadows a state or the variable"
            )));
        }
    }
    // Definitions may refer to each other in any order; resolve to a fixed point.
    let mut done: HashMap<String, Expr> = HashMap::new();
    let mut pending: Vec<&String> = raw.keys().collect();
    while !pending.is_empty() {
        let mut progress = false;
        let mut first_err = None;
        pending.retain(|name| {
            let span = &raw[*name];
            let mut scope = Scope {
                variable,
                states,
                definitions: &done,
                allow_states: false,
                delays: None,
            };
            match parse_expr(span.get_ref(), &mut scope) {
                Ok(e) => {
                    done.insert((*name).clone(), e);
                    progress = true;
                    false
                }
                Err(e) => {
                    if first_err.is_none() {
                        first_err = Some(expr_err(text, span, &format!("definition `{name}`"), e));
                    }
                    true
                }
            }
        });
        if !progress {
            return Err(first_err.expect("pending is non-empty"));
        }
    }
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "decay"
domain = [0.0, 2.0]

[definitions]
k = "2 * half"
half = "0.5"

[[state]]
name = "y"
initial = [1.0]
exact = "exp(-k*t)"

[[equation]]
residual = "y' = -k*y"
"#;

    #[test]
    fn parses_minimal_problem() {
        let p = Problem::from_toml(MINIMAL).unwrap();
        assert_eq!(p.kind(), ProblemKind::Fdde);
        assert_eq!(p.variable, "t");
        assert!((p.exact(0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(p.network, NetworkTemplate::standard());
        assert_eq!(p.network_order(0).unwrap(), 1);
        assert_eq!(p.forcing(0, 0.3), 0.0);
    }

    #[test]
    fn expression_errors_name_the_line() {
        let bad = MINIMAL.replace("y' = -k*y", "y' = -k*)y");
        match Problem::from_toml(&bad).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, Some(15));
                assert!(message.contains("equation"), "{message}");
            }
            e => panic!("{e}"),
        }
        let bad = MINIMAL.replace("half = \"0.5\"", "half = \"0.5 +\"");
        match Problem::from_toml(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, Some(7)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn toml_errors_name_the_line() {
        let bad = MINIMAL.replace("domain = [0.0, 2.0]", "domain = [0.0, 2.0");
        assert!(matches!(
            Problem::from_toml(&bad).unwrap_err(),
            Error::Parse { line: Some(_), .. }
        ));
        let bad = MINIMAL.replace("initial", "initals");
        assert!(matches!(
            Problem::from_toml(&bad).unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn rejects_inconsistent_problems() {
        for (from, to) in [
            ("initial = [1.0]", "initial = [1.0, 2.0]"),
            ("domain = [0.0, 2.0]", "domain = [2.0, 0.0]"),
            ("name = \"y\"", "name = \"exp\""),
            ("name = \"y\"", "name = \"t\""),
            ("k = \"2 * half\"", "k = \"2 * k\""),
            ("exact = \"exp(-k*t)\"", "exact = \"y\""),
            ("y' = -k*y", "y''' = y"),
        ] {
            assert!(
                Problem::from_toml(&MINIMAL.replace(from, to)).is_err(),
                "{to}"
            );
        }
        let extra = format!("{MINIMAL}\n[[equation]]\nresidual = \"y = 0\"\n");
        assert!(Problem::from_toml(&extra).is_err());
        let alg = MINIMAL
            .replace("initial = [1.0]", "order = 0.0")
            .replace("y' = -k*y", "D(y) = 1");
        assert!(Problem::from_toml(&alg).is_err());
    }

    #[test]
    fn order_override_drops_exact() {
        let p = Problem::from_toml(MINIMAL).unwrap();
        let p = p.with_order(0.5).unwrap();
        assert!(!p.has_exact());
        assert!((p.states[0].order.unwrap().alpha() - 0.5).abs() < 1e-15);
        assert!(Problem::from_toml(MINIMAL)
            .unwrap()
            .with_order(3.0)
            .is_err());
    }
}
