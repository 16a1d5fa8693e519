//! Data pipeline (placeholder).
