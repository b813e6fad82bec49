//! Named analytic fields for initial conditions, boundary values, and
//! volumetric sources. Case files refer to these by name; tests use the
//! closures directly.

use crate::error::{Error, Result};
use std::sync::Arc;

/// A scalar field of space and time.
pub type FieldFn = Arc<dyn Fn([f64; 3], f64) -> f64 + Send + Sync>;

/// A boundary flux of position, outward unit normal, and time.
pub type FluxFn = Arc<dyn Fn([f64; 3], [f64; 3], f64) -> f64 + Send + Sync>;

pub fn zero_flux() -> FluxFn {
    Arc::new(|_, _, _| 0.0)
}

/// Lift a plain field to a normal-independent flux.
pub fn flux_from_field(f: FieldFn) -> FluxFn {
    Arc::new(move |x, _, t| f(x, t))
}

pub fn zero() -> FieldFn {
    Arc::new(|_, _| 0.0)
}

pub fn constant(c: f64) -> FieldFn {
    Arc::new(move |_, _| c)
}

pub fn linear(a0: f64, ax: f64, ay: f64, az: f64) -> FieldFn {
    Arc::new(move |p, _| a0 + ax * p[0] + ay * p[1] + az * p[2])
}

/// sin(pi x) sin(pi y) sin(pi z), the manufactured conduction solution.
pub fn sin_pi_product(amp: f64) -> FieldFn {
    Arc::new(move |p, _| {
        let pi = std::f64::consts::PI;
        amp * (pi * p[0]).sin() * (pi * p[1]).sin() * (pi * p[2]).sin()
    })
}

/// sin(pi x), the two-slab steady profile builder.
pub fn sin_pi_x(amp: f64) -> FieldFn {
    Arc::new(move |p, _| amp * (std::f64::consts::PI * p[0]).sin())
}

/// Taylor-Green vortex velocity components on [0, 2pi]^2 with viscosity nu:
/// u = -cos x sin y e^{-2 nu t}, v = sin x cos y e^{-2 nu t}.
pub fn taylor_green_u(nu: f64) -> FieldFn {
    Arc::new(move |p, t| -(p[0]).cos() * (p[1]).sin() * (-2.0 * nu * t).exp())
}

pub fn taylor_green_v(nu: f64) -> FieldFn {
    Arc::new(move |p, t| (p[0]).sin() * (p[1]).cos() * (-2.0 * nu * t).exp())
}

/// Parse "name [params...]" into a field.
pub fn named_field(spec: &str) -> Result<FieldFn> {
    let parts: Vec<&str> = spec.split_whitespace().collect();
    if parts.is_empty() {
        return Err(Error::Config("empty field specification".into()));
    }
    let params: Vec<f64> = parts[1..]
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad field parameter '{s}' in '{spec}'")))
        })
        .collect::<Result<_>>()?;
    let want = |n: usize| -> Result<()> {
        if params.len() != n {
            return Err(Error::Config(format!(
                "field '{}' expects {} parameter(s), got {}",
                parts[0],
                n,
                params.len()
            )));
        }
        Ok(())
    };
    match parts[0] {
        "zero" => {
            want(0)?;
            Ok(zero())
        }
        "constant" => {
            want(1)?;
            Ok(constant(params[0]))
        }
        "linear" => {
            want(4)?;
            Ok(linear(params[0], params[1], params[2], params[3]))
        }
        "sinPiProduct" => {
            want(1)?;
            Ok(sin_pi_product(params[0]))
        }
        "sinPiX" => {
            want(1)?;
            Ok(sin_pi_x(params[0]))
        }
        "taylorGreenU" => {
            want(1)?;
            Ok(taylor_green_u(params[0]))
        }
        "taylorGreenV" => {
            want(1)?;
            Ok(taylor_green_v(params[0]))
        }
        other => Err(Error::Config(format!("unknown field name '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_fields_parse() {
        let f = named_field("constant 3.5").unwrap();
        assert_eq!(f([0.0; 3], 0.0), 3.5);
        let f = named_field("linear 1 2 3 4").unwrap();
        assert_eq!(f([1.0, 1.0, 1.0], 0.0), 10.0);
        assert!(named_field("banana").is_err());
        assert!(named_field("constant").is_err());
        assert!(named_field("constant x").is_err());
    }

    #[test]
    fn taylor_green_satisfies_continuity() {
        // du/dx + dv/dy = sin x sin y - sin x sin y = 0 pointwise
        let u = taylor_green_u(0.01);
        let v = taylor_green_v(0.01);
        let h = 1e-6;
        for &(x, y) in &[(0.3, 1.1), (2.0, 4.4), (5.9, 0.2)] {
            let dudx = (u([x + h, y, 0.0], 0.5) - u([x - h, y, 0.0], 0.5)) / (2.0 * h);
            let dvdy = (v([x, y + h, 0.0], 0.5) - v([x, y - h, 0.0], 0.5)) / (2.0 * h);
            assert!((dudx + dvdy).abs() < 1e-8);
        }
    }
}
