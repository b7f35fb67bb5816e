//! Python bindings: dispersion, inversion, feasibility, TBA and exact free energies.

#[pyo3::pymodule]
mod inozemtsev_py {
    use inozemtsev::dispersion::{DispersionContext, DispersionError};
    use inozemtsev::elliptic::C64;
    use inozemtsev::exactdiag::{self, ExactDiagError, PotentialKind, PotentialSpec};
    use inozemtsev::stringfeas::{self, SignConfiguration};
    use inozemtsev::tba::{self, Dispersion, RapidityGrid, TbaError, TbaOptions};
    use pyo3::exceptions::{PyRuntimeError, PyValueError};
    use pyo3::prelude::*;
    use pyo3::types::PyDict;

    fn disp_err(e: DispersionError) -> PyErr {
        PyRuntimeError::new_err(e.to_string())
    }

    fn tba_err(e: TbaError) -> PyErr {
        match e {
            TbaError::InvalidParameter(m) => PyValueError::new_err(m),
            e => PyRuntimeError::new_err(e.to_string()),
        }
    }

    fn ed_err(e: ExactDiagError) -> PyErr {
        match e {
            ExactDiagError::Io(e) => PyRuntimeError::new_err(e.to_string()),
            e => PyValueError::new_err(e.to_string()),
        }
    }

    fn context(kappa: f64, j: f64) -> PyResult<DispersionContext> {
        DispersionContext::new(kappa, j).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// One-magnon energy ε(p).
    #[pyfunction]
    #[pyo3(signature = (kappa, p, j = 1.0))]
    fn epsilon(kappa: f64, p: C64, j: f64) -> PyResult<C64> {
        context(kappa, j)?.epsilon(p).map_err(disp_err)
    }

    /// Rapidity φ(p).
    #[pyfunction]
    #[pyo3(signature = (kappa, p, j = 1.0))]
    fn phi(kappa: f64, p: C64, j: f64) -> PyResult<C64> {
        context(kappa, j)?.phi(p).map_err(disp_err)
    }

    /// Momentum in region `D_region` with φ(p) = theta.
    #[pyfunction]
    #[pyo3(signature = (kappa, theta, region = 0, j = 1.0))]
    fn invert_phi(kappa: f64, theta: C64, region: i64, j: f64) -> PyResult<C64> {
        context(kappa, j)?.invert_phi_region(theta, region).map_err(disp_err)
    }

    /// Feasibility of a sign configuration such as `"1-/1+1-/1+"`.
    #[pyfunction]
    fn classify<'py>(py: Python<'py>, configuration: &str) -> PyResult<Bound<'py, PyDict>> {
        let cfg: SignConfiguration = configuration.parse().map_err(|e: stringfeas::FeasError| PyValueError::new_err(e.to_string()))?;
        let v = stringfeas::decide_feasibility(&stringfeas::build_rate_system(&cfg));
        let d = PyDict::new(py);
        d.set_item("status", format!("{:?}", v.status))?;
        d.set_item("witness", v.witness)?;
        d.set_item("ordering", v.ordering)?;
        d.set_item("contains_ex1", cfg.contains_ex1())?;
        Ok(d)
    }

    /// TBA free energy per site; `kappa = None` is the XXX chain.
    #[pyfunction]
    #[pyo3(signature = (t, kappa = None, j = 1.0, cutoff = 30.0, n_points = 512, q_cap = tba::Q_CAP))]
    fn free_energy<'py>(
        py: Python<'py>,
        t: f64,
        kappa: Option<f64>,
        j: f64,
        cutoff: f64,
        n_points: usize,
        q_cap: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let grid = RapidityGrid::new(cutoff, n_points).map_err(tba_err)?;
        let opt = TbaOptions { q_cap: q_cap.clamp(1, tba::Q_CAP), ..TbaOptions::default() };
        let ctx = kappa.map(|k| context(k, j)).transpose()?;
        let disp = match &ctx {
            Some(c) => Dispersion::Elliptic(c),
            None => Dispersion::Xxx { j },
        };
        let (sol, fe) = py.detach(|| tba::solve(t, disp, &grid, &opt, None)).map_err(tba_err)?;
        let d = PyDict::new(py);
        d.set_item("f", fe.f)?;
        d.set_item("tail", fe.tail)?;
        d.set_item("q_max", sol.q_max)?;
        d.set_item("iterations", sol.iterations)?;
        d.set_item("residual", sol.residual)?;
        d.set_item("stable", sol.stable)?;
        Ok(d)
    }

    /// Exact free energy per site of a ring (or open chain) of length `l`.
    #[pyfunction]
    #[pyo3(signature = (kind, t, l, kappa = None, j = 1.0))]
    fn exact_free_energy(py: Python<'_>, kind: &str, t: f64, l: usize, kappa: Option<f64>, j: f64) -> PyResult<f64> {
        let need = || kappa.ok_or_else(|| PyValueError::new_err(format!("{kind} needs kappa")));
        let kind = match kind {
            "xxx" => PotentialKind::Xxx,
            "hs" => PotentialKind::Hs,
            "elliptic" => PotentialKind::Elliptic(need()?),
            "hyperbolic" => PotentialKind::Hyperbolic(need()?),
            "hyperbolic-open" => PotentialKind::HyperbolicOpen(need()?),
            other => return Err(PyValueError::new_err(format!("unknown potential {other:?}"))),
        };
        let spec = PotentialSpec::new(kind, l, j).map_err(ed_err)?;
        py.detach(|| exactdiag::free_energy_trace(&spec, t)).map_err(ed_err)
    }
}
