//! Privacy-preserving SVM computing on templates protected by key-seeded
//! random orthogonal transforms.
//!
//! A client protects its feature templates with `Q_p f`, where `Q_p` is an
//! orthogonal matrix expanded from a secret key. Isotropic-stationary
//! kernels (RBF, rational quadratic, wave) and inner-product kernels
//! (linear, polynomial) take the same values on protected templates as on
//! the originals whenever both sides share a key, so a server can train and
//! query ordinary SVMs without ever holding a key.

pub mod evalx;
pub mod features;
pub mod kernels;
pub mod keyring;
pub mod numeric;
pub mod service;
pub mod store;
pub mod svm;
pub mod transform;

pub use kernels::{eval_kernel, gram, kernel_class, GramMatrix, KernelClass, KernelSpec};
pub use svm::{decision_score, train_binary, train_one_vs_rest, SolverConfig, SvmModel};
pub use transform::{expand_key, protect, ProtectedTemplate, Template, TransformKey, TransformKind};
