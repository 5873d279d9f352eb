'''Numerical laboratory for complex Hessian equations and m-subharmonic potential theory.'''
