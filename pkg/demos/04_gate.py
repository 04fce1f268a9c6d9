"""Routing new predictions with a capability certificate.

Run: python demos/04_gate.py
"""
from mlcap.cdi import CLASS1, CLASS2
from mlcap.gate import MlcCertificate, gate_case

cert = MlcCertificate("mortality-model", mlc_class1=0.43, mlc_class2=0.78)

# Predicted class 2 ("alive"): the CDI is used as is and exceeds 0.78.
print(gate_case(0.80, CLASS2, cert, case_id="patient-a"))

# Predicted class 1 ("dead"): the CDI is negated first, -0.80 <= 0.43.
print(gate_case(0.80, CLASS1, cert, case_id="patient-b"))

pulsar = MlcCertificate("pulsar-model", mlc_class1=0.12, mlc_class2=0.32)
for cls, name in ((CLASS2, "non-pulsar"), (CLASS1, "pulsar")):
    d = gate_case(0.10, cls, pulsar)
    print(f"raw 0.10 predicted {name}: oriented {d.oriented_cdi:+.2f} vs {d.threshold:.2f} -> {d.verdict}")
