#![allow(dead_code)]

pub mod dag;
pub mod gen;
pub mod oracle;
