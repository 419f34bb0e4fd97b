from setuptools import find_packages,setup
from typing import List



def get_requirement()->List[str]:
    requirement_list:List[str]=[]
    with open('requirement.txt','r') as file:
        lines=file.readlines()
        for line in lines:
            requirement=line.strip()

            if requirement and requirement!='-e .':
                requirement_list.append(requirement)

    return requirement_list

setup(
    name="ergodic-lab",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    python_requires=">=3.9",
    install_requires=get_requirement(),
    entry_points={
        "console_scripts": ["ergodic-lab=ergodic_lab.api.app:cli"],
    },
)
