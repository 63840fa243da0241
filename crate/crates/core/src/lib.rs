#![doc = include_str!("../../../book/src/introduction.md")]
// `!(x > 0.0)` is how parameter checks reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod blockmat;
pub mod data;
pub mod error;
pub mod frpd;
pub mod harness;
pub mod metrics;
pub mod problem;
pub mod prox;
pub mod schedule;
pub mod srpd;
#[cfg(test)]
mod testkit;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/problem.md")]
    mod problem {}
    #[doc = include_str!("../../../book/src/prox.md")]
    mod prox {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/frpd.md")]
    mod frpd {}
    #[doc = include_str!("../../../book/src/srpd.md")]
    mod srpd {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/rates.md")]
    mod rates {}
}
