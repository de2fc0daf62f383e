use nbode::autodiff::{bilinear_hvp, grad, jvp, DiffMap, Dual, Tensor};
use nbode::linalg::Mat;
use nbode::model::{mlp_forward, MlpVectorField};
use proptest::prelude::*;

struct Net(Vec<(Mat, Mat)>);

impl Net {
    fn new(seed: u64) -> Self {
        Net(MlpVectorField::init(seed, &[3, 8, 3]).unwrap().layers())
    }

    fn layers<T: Tensor>(&self, x: &T) -> Vec<(T::Param, T::Param)> {
        self.0.iter().map(|(w, b)| (x.param_like(w.clone()), x.param_like(b.clone()))).collect()
    }
}

impl DiffMap for Net {
    fn apply<T: Tensor>(&self, x: &T) -> T {
        mlp_forward(x, &self.layers(x))
    }
}

/// `x -> c * sum(df(x)[v])`, a scalar built from a forward-mode product.
struct TangentSum<'a> {
    net: &'a Net,
    v: Vec<f64>,
    c: f64,
}

impl DiffMap for TangentSum<'_> {
    fn apply<T: Tensor>(&self, x: &T) -> T {
        let dx = Dual::new(x.clone(), x.constant_like(Mat::row_vector(&self.v)));
        let layers = self.net.layers(x);
        mlp_forward(&dx, &layers).tangent.sum().scale(self.c)
    }
}

/// Ignores the coordinates where `mask` is zero.
struct Masked(Vec<f64>);

impl DiffMap for Masked {
    fn apply<T: Tensor>(&self, x: &T) -> T {
        let m = x.constant_like(Mat::row_vector(&self.0));
        x.mul(&m).tanh().exp().sum()
    }
}

fn eval(net: &Net, x: &[f64]) -> Vec<f64> {
    net.apply(&Mat::row_vector(x)).into_vec()
}

fn shifted(x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

const X: [f64; 3] = [0.4, -0.9, 1.3];
const V: [f64; 3] = [0.7, 0.2, -0.5];

#[test]
fn jvp_matches_central_differences() {
    let net = Net::new(1);
    let h = 1e-5;
    let fp = eval(&net, &shifted(&X, &V, h));
    let fm = eval(&net, &shifted(&X, &V, -h));
    let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let exact = jvp(&net, &X, &V).unwrap();
    assert!(rel_err(&fd, &exact) <= 1e-5, "{fd:?} vs {exact:?}");
}

#[test]
fn hvp_matches_second_differences_of_jvp() {
    let net = Net::new(2);
    let h = 1e-5;
    let jp = jvp(&net, &shifted(&X, &V, h), &V).unwrap();
    let jm = jvp(&net, &shifted(&X, &V, -h), &V).unwrap();
    let fd: Vec<f64> = jp.iter().zip(&jm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let exact = bilinear_hvp(&net, &X, &V).unwrap();
    assert!(rel_err(&fd, &exact) <= 1e-5, "{fd:?} vs {exact:?}");
}

#[test]
fn reverse_over_forward_matches_differences() {
    let net = Net::new(3);
    let f = TangentSum { net: &net, v: V.to_vec(), c: 1.7 };
    let g = grad(&f, &X).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..3)
        .map(|i| {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            let up = f.apply(&Mat::row_vector(&shifted(&X, &e, h))).into_vec()[0];
            let dn = f.apply(&Mat::row_vector(&shifted(&X, &e, -h))).into_vec()[0];
            (up - dn) / (2.0 * h)
        })
        .collect();
    assert!(rel_err(&fd, &g) <= 1e-5, "{fd:?} vs {g:?}");
}

#[test]
fn unused_coordinate_has_exact_zero_gradient() {
    let g = grad(&Masked(vec![1.0, 0.0, 2.0]), &X).unwrap();
    assert_eq!(g[1], 0.0);
    assert!(g[0] != 0.0 && g[2] != 0.0);
}

#[test]
fn linear_map_jvp_is_the_weight_product() {
    let w = Mat::from_rows(&[[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]]);
    let lin = Net(vec![(w.clone(), Mat::zeros(1, 2))]);
    for x in [[0.0, 0.0, 0.0], [5.0, -3.0, 2.0]] {
        let got = jvp(&lin, &x, &V).unwrap();
        let want = Mat::row_vector(&V).matmul_t(&w).into_vec();
        assert_eq!(got, want);
    }
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jvp_is_linear_in_the_direction(x in vec3(), v in vec3(), w in vec3(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let net = Net::new(4);
        let mix: Vec<f64> = v.iter().zip(&w).map(|(p, q)| a * p + b * q).collect();
        let lhs = jvp(&net, &x, &mix).unwrap();
        let jv = jvp(&net, &x, &v).unwrap();
        let jw = jvp(&net, &x, &w).unwrap();
        for i in 0..3 {
            let rhs = a * jv[i] + b * jw[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{} vs {}", lhs[i], rhs);
        }
    }

    #[test]
    fn hvp_is_quadratic_in_the_direction(x in vec3(), v in vec3(), a in -3.0f64..3.0) {
        let net = Net::new(5);
        let av: Vec<f64> = v.iter().map(|p| a * p).collect();
        let lhs = bilinear_hvp(&net, &x, &av).unwrap();
        let base = bilinear_hvp(&net, &x, &v).unwrap();
        for i in 0..3 {
            let rhs = a * a * base[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{} vs {}", lhs[i], rhs);
        }
    }
}
