//! Equilibrium solvers for the time-scheduling game played in an RF-powered
//! backscatter cognitive radio network.
//!
//! A secondary gateway (the leader) picks an interference price, a sensing
//! duration and an energy-detection threshold. `K` secondary transmitters
//! (the followers) then split the remainder of each slot between energy
//! harvesting, ambient backscattering and active transmission, subject to
//! shared TDMA time budgets and per-node supply-power constraints.
//!
//! The crate is organised as:
//!
//! * [`model`] — closed-form network model: detection probabilities,
//!   harvested energy, rates, payoffs, analytic gradients/Hessians and the
//!   constraint system, all as pure functions.
//! * [`polysolve`] — small dense solvers: a two-phase simplex and an exact
//!   maximizer for 2-D strongly concave objectives over convex polygons.
//! * [`gne`] — the follower sub-game: proximal best-response iteration
//!   (Gauss-Seidel and Jacobi), KKT certificates, contraction-constant
//!   estimation and a brute-force grid oracle.
//! * [`stackelberg`] — the leader search: directional ascent driven by a
//!   sensitivity linear program, plus the fixed-mode baseline schemes.

pub mod gne;
pub mod model;
pub mod polysolve;
pub mod stackelberg;
