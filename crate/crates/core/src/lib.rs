//! Separation of interpenetrating triangle meshes.
//!
//! Edges of one mesh are tested against the faces of an oriented mesh; every
//! vertex caught on the back side of a crossed face becomes the apex of a
//! penetration stencil. Stencils sharing vertices are grouped into impact
//! zones, and each zone is moved by the mass-weighted smallest displacement
//! that puts every apex back on (or `d` in front of) its face plane. The
//! corrections are diffused into the surrounding surface and the whole cycle
//! repeats until no crossing remains.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {:e})", a, b, tol);
    }};
}

pub mod dcd;
pub mod diffusion;
pub mod mesh;
pub mod response;
pub mod sim;
pub mod stencil;
pub mod untangler;

pub use mesh::{TriangleMesh, Vec3};
