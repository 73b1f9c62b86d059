//! Weak-form compiler and embedded finite-element runtime for incomplete
//! adaptive quadtree/octree meshes using the shifted boundary method.

pub mod expr;
pub mod problem;
pub mod symbolic;
pub mod geometry;
pub mod mesh;
pub mod fem;
pub mod solve;
pub mod codegen;
pub mod study;
