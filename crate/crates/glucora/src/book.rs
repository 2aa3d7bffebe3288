//! Doc-tested book chapters are attached here once written.
