use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::path::PathView;

pub type EndpointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type PathFn = Arc<dyn Fn(&PathView<'_>) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalKind {
    /// Depends on the path only through its value at the horizon.
    Endpoint,
    /// General functional of the whole path.
    Path,
}

#[derive(Clone)]
enum Functional {
    Endpoint(EndpointFn),
    Path(PathFn),
}

/// Terminal condition `xi = phi(w)` for a path `w` on `[0, T]`.
#[derive(Clone)]
pub struct TerminalFunctional {
    name: String,
    functional: Functional,
    /// Lipschitz constant with respect to the sup norm.
    pub lipschitz: Option<f64>,
    /// `sup |phi|`.
    pub bound: Option<f64>,
}

impl fmt::Debug for TerminalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalFunctional")
            .field("name", &self.name)
            .field("kind", &self.kind())
            .field("lipschitz", &self.lipschitz)
            .field("bound", &self.bound)
            .finish()
    }
}

impl TerminalFunctional {
    pub fn endpoint<F>(name: impl Into<String>, phi: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            functional: Functional::Endpoint(Arc::new(phi)),
            lipschitz: None,
            bound: None,
        }
    }

    pub fn path<F>(name: impl Into<String>, phi: F) -> Self
    where
        F: Fn(&PathView<'_>) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            functional: Functional::Path(Arc::new(phi)),
            lipschitz: None,
            bound: None,
        }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_bound(mut self, b: f64) -> Self {
        self.bound = Some(b);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> TerminalKind {
        match self.functional {
            Functional::Endpoint(_) => TerminalKind::Endpoint,
            Functional::Path(_) => TerminalKind::Path,
        }
    }

    /// Endpoint functionals are Markovian in the walk.
    pub fn is_markovian(&self) -> bool {
        self.kind() == TerminalKind::Endpoint
    }

    /// `phi` as a function of the endpoint, for endpoint functionals.
    pub fn endpoint_fn(&self) -> Option<&EndpointFn> {
        match &self.functional {
            Functional::Endpoint(f) => Some(f),
            Functional::Path(_) => None,
        }
    }

    /// Value on an endpoint vector. Path functionals see the constant path.
    pub fn evaluate_endpoint(&self, x: &[f64]) -> f64 {
        match &self.functional {
            Functional::Endpoint(f) => f(x),
            Functional::Path(f) => {
                let times = [0.0];
                f(&PathView::new(&times, x, x.len()))
            }
        }
    }

    pub fn evaluate(&self, path: &PathView<'_>) -> f64 {
        match &self.functional {
            Functional::Endpoint(f) => match path.last() {
                Some(x) => f(x),
                None => f(&vec![0.0; path.dim()]),
            },
            Functional::Path(f) => f(path),
        }
    }

    /// `s * phi`.
    pub fn scaled(&self, s: f64) -> Self {
        let functional = match &self.functional {
            Functional::Endpoint(f) => {
                let f = f.clone();
                Functional::Endpoint(Arc::new(move |x: &[f64]| s * f(x)))
            }
            Functional::Path(f) => {
                let f = f.clone();
                Functional::Path(Arc::new(move |w: &PathView<'_>| s * f(w)))
            }
        };
        Self {
            name: format!("{s}*{}", self.name),
            functional,
            lipschitz: self.lipschitz.map(|l| l * s.abs()),
            bound: self.bound.map(|b| b * s.abs()),
        }
    }

    /// `phi + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let functional = match &self.functional {
            Functional::Endpoint(f) => {
                let f = f.clone();
                Functional::Endpoint(Arc::new(move |x: &[f64]| f(x) + c))
            }
            Functional::Path(f) => {
                let f = f.clone();
                Functional::Path(Arc::new(move |w: &PathView<'_>| f(w) + c))
            }
        };
        Self {
            name: format!("{}+{c}", self.name),
            functional,
            lipschitz: self.lipschitz,
            bound: self.bound.map(|b| b + c.abs()),
        }
    }
}
