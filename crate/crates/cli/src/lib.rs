//! Pieces of the command-line tool that are worth testing on their own.

use rulemine::oracle::DEFAULT_THRESHOLD;
use rulemine::theory::{
    approximation_trial, check_lower_bound, check_preference, check_upper_bound, ScoreModel, SetSystem,
};
use rulemine::Result;

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Failed, but no implementation can meet the stated target.
    Unattainable(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryRow {
    pub check: String,
    pub detail: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryOptions {
    /// Universe size in the bounds' `c·ln n` floor and `2/n⁴` allowance.
    pub n: f64,
    pub trials: usize,
    /// Set systems in the approximation checks.
    pub systems: u64,
    /// Smallest set in those systems; defaults to the lower-bound floor.
    pub set_size: Option<usize>,
    /// Size of the precise set in the preference check.
    pub preference_size: usize,
    pub seed: u64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            n: 1e4,
            trials: 100_000,
            systems: 200,
            set_size: None,
            preference_size: 1_000,
            seed: 0,
        }
    }
}

fn row(check: &str, detail: String, pass: bool) -> TheoryRow {
    TheoryRow {
        check: check.into(),
        detail,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    }
}

/// Monte-Carlo checks of the score-model bounds for one parameter setting.
pub fn theory_report(m: &ScoreModel, opts: &TheoryOptions) -> Result<Vec<TheoryRow>> {
    m.validate()?;
    let n = opts.n;
    let mut rows = Vec::new();

    let lo_size = (m.lower_constant() * n.ln()).ceil() as usize;
    let lo = check_lower_bound(m, lo_size, 0.9, n, opts.trials, opts.seed)?;
    rows.push(row(
        "lower bound",
        format!(
            "|C| = {lo_size}, p = 0.9: {}/{} below (1-e)*theta*beta'*|C|; allowed {:.2e}",
            lo.violations,
            lo.trials,
            lo.allowed + lo.slack
        ),
        lo.pass,
    ));
    let up_size = (m.upper_constant() * n.ln()).ceil() as usize;
    let up = check_upper_bound(m, up_size, 0.9, n, opts.trials, opts.seed + 1)?;
    rows.push(row(
        "upper bound",
        format!(
            "|C| = {up_size}, p = 0.9: {}/{} above (1+e)*mean*|C|; allowed {:.2e}",
            up.violations,
            up.trials,
            up.allowed + up.slack
        ),
        up.pass,
    ));
    let small = opts.preference_size;
    let large = (2.0 * m.alpha() * small as f64).ceil() as usize;
    let rate = check_preference(m, (large, small as f64 / large as f64), (small, 1.0), opts.trials, opts.seed + 2)?;
    rows.push(row(
        "preference at 2*alpha",
        format!("alpha = {:.3}; |C1| = {large} vs precise |C2| = {small}: rate {rate:.5} (need 0.99)", m.alpha()),
        rate >= 0.99,
    ));

    let (alpha, gamma) = (m.alpha(), m.gamma());
    let floor = opts.set_size.unwrap_or(lo_size);
    // precise sets or sets below gamma, as the approximation argument assumes
    let bands = [(0.0, (gamma - 0.1).max(0.0)), (DEFAULT_THRESHOLD, 1.0)];
    let mut ratios = Vec::new();
    for s in 0..opts.systems {
        let system = SetSystem::random(20, floor, 2 * floor, &bands, opts.seed + s);
        let t = approximation_trial(m, &system, 5, DEFAULT_THRESHOLD, opts.seed + s)?;
        ratios.push(if t.optimum == 0 { 1.0 } else { t.found as f64 / t.optimum as f64 });
    }
    let share = |f: f64| ratios.iter().filter(|&&r| r >= f).count() as f64 / ratios.len().max(1) as f64;
    let literal = share(alpha * gamma);
    rows.push(TheoryRow {
        check: "approximation alpha*gamma".into(),
        detail: format!(
            "found >= {:.3}*OPT on {:.1}% of {} systems (need 95%)",
            alpha * gamma,
            100.0 * literal,
            opts.systems
        ),
        verdict: if literal >= 0.95 {
            Verdict::Pass
        } else if alpha * gamma > 1.0 {
            Verdict::Unattainable(format!("alpha*gamma = {:.3} > 1 and found <= OPT", alpha * gamma))
        } else {
            Verdict::Fail
        },
    });
    let implied = share(gamma / alpha);
    rows.push(row(
        "approximation gamma/alpha",
        format!(
            "found >= {:.4}*OPT on {:.1}% of {} systems (need 95%)",
            gamma / alpha,
            100.0 * implied,
            opts.systems
        ),
        implied >= 0.95,
    ));
    Ok(rows)
}

/// Fixed-width table, one line per check.
pub fn format_table(rows: &[TheoryRow]) -> String {
    let width = rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:<6}  detail\n", "check", "result");
    for r in rows {
        let (result, why) = match &r.verdict {
            Verdict::Pass => ("PASS", String::new()),
            Verdict::Fail => ("FAIL", String::new()),
            Verdict::Unattainable(w) => ("FAIL", format!(" [unattainable: {w}]")),
        };
        out.push_str(&format!("{:<width$}  {result:<6}  {}{why}\n", r.check, r.detail));
    }
    out
}

/// Comma-separated values, trimmed, empties dropped.
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(String::from)
        .collect()
}
