//! Fixed-step classical Runge-Kutta.

/// RK4 with reusable scratch space. The right-hand side is called as
/// `f(t, x, dx)` and must fill `dx`.
#[derive(Debug, Clone, Default)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub const ORDER: u32 = 4;

    pub fn new() -> Self {
        Self::default()
    }

    fn resize(&mut self, n: usize) {
        for buf in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            buf.clear();
            buf.resize(n, 0.0);
        }
    }

    pub fn step<F>(&mut self, t: f64, x: &mut [f64], dt: f64, mut f: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = x.len();
        self.resize(n);
        let half = 0.5 * dt;

        f(t, x, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k1[i];
        }
        f(t + half, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + half * self.k2[i];
        }
        f(t + half, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        f(t + dt, &self.tmp, &mut self.k4);
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}
